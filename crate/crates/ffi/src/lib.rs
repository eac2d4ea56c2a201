//! C ABI over the hyperlatent core.
//!
//! Trees and value heads cross the boundary as opaque handles that the caller
//! releases with the matching `*_free` function. Every fallible call returns
//! an [`HlStatus`]; on failure a description is kept per thread and can be
//! read with [`hl_last_error_message`]. Panics are caught at the boundary and
//! reported as `HL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use hyperlatent::env::{PlantedTree, PlantedTreeSpec};
use hyperlatent::geometry::{self, AmbientVector, BallPoint, GeoConfig, GeoError};
use hyperlatent::mcts::{run_search, SearchConfig};
use hyperlatent::persist::{self, PersistError};
use hyperlatent::shaping::{shape_tree, RewardScheme, ShapingError};
use hyperlatent::tree::{NodeId, SearchTree};
use hyperlatent::value_head::ValueHead;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfRange = 3,
    Geometry = 4,
    Io = 5,
    Parse = 6,
    VersionMismatch = 7,
    Unshapeable = 8,
    Search = 9,
    NotAvailable = 10,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HlRewardScheme {
    Poincare = 0,
    Euclidean = 1,
    Sparse01 = 2,
}

fn scheme_from_raw(raw: u32) -> Result<RewardScheme, Failure> {
    match raw {
        x if x == HlRewardScheme::Poincare as u32 => Ok(RewardScheme::Poincare),
        x if x == HlRewardScheme::Euclidean as u32 => Ok(RewardScheme::Euclidean),
        x if x == HlRewardScheme::Sparse01 as u32 => Ok(RewardScheme::Sparse01),
        other => Err((HlStatus::InvalidArgument, format!("unknown reward scheme {other}"))),
    }
}

/// Opaque search tree.
pub struct HlTree {
    tree: SearchTree,
}

/// Opaque linear value head.
pub struct HlValueHead {
    head: ValueHead,
}

/// Search knobs exposed to C. Obtain defaults from
/// [`hl_search_params_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HlSearchParams {
    pub num_sim: usize,
    pub exploration_c: f64,
    pub mix_eta: f64,
    pub prune_interval: usize,
    pub prune_ratio: f64,
    pub cluster_threshold: f64,
    pub rng_seed: u64,
}

/// Planted-path environment description. `planted_path` points to `depth`
/// child indices.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HlPlantedSpec {
    pub branching: usize,
    pub depth: usize,
    pub planted_path: *const usize,
    pub noise: f64,
    pub seed: u64,
}

/// Per-node statistics. `parent` is -1 for the root; `terminal_reward` and
/// `potential` are NaN when absent.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HlNodeInfo {
    pub parent: i64,
    pub depth: usize,
    pub child_count: usize,
    pub enabled: bool,
    pub is_terminal: bool,
    pub terminal_reward: f64,
    pub visits: u64,
    pub q: f64,
    pub q0: f64,
    pub prior: f64,
    pub value_pred: f64,
    pub potential: f64,
}

type Failure = (HlStatus, String);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HlStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("panic: {msg}"));
            HlStatus::Panic
        }
    }
}

fn null() -> Failure {
    (HlStatus::NullPointer, "null pointer argument".into())
}

fn geo_failure(e: GeoError) -> Failure {
    (HlStatus::Geometry, e.to_string())
}

fn persist_failure(e: PersistError) -> Failure {
    let status = match &e {
        PersistError::Io(_) => HlStatus::Io,
        PersistError::Parse { .. } => HlStatus::Parse,
        PersistError::VersionMismatch { .. } => HlStatus::VersionMismatch,
        PersistError::Geometry(_) => HlStatus::Geometry,
    };
    (status, e.to_string())
}

unsafe fn read_slice<'a>(p: *const f64, len: usize) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null());
    }
    if len == 0 {
        return Err((HlStatus::InvalidArgument, "dimension must be positive".into()));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn read_path(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| (HlStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn tree_ref<'a>(t: *const HlTree) -> Result<&'a SearchTree, Failure> {
    t.as_ref().map(|h| &h.tree).ok_or_else(null)
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null());
    }
    out.write(value);
    Ok(())
}

fn node_id(tree: &SearchTree, node: usize) -> Result<NodeId, Failure> {
    let id = NodeId(node);
    if tree.contains(id) {
        Ok(id)
    } else {
        Err((HlStatus::OutOfRange, format!("node {node} not in tree of {} nodes", tree.len())))
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message describing the last failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Geodesic distance between two points of the unit ball.
///
/// # Safety
/// `u` and `v` must each point to `dim` readable doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn hl_geodesic_distance(u: *const f64, v: *const f64, dim: usize, out: *mut f64) -> HlStatus {
    guard(|| {
        let u = BallPoint::new(read_slice(u, dim)?.to_vec()).map_err(geo_failure)?;
        let v = BallPoint::new(read_slice(v, dim)?.to_vec()).map_err(geo_failure)?;
        write_out(out, geometry::geodesic_distance(&u, &v).map_err(geo_failure)?)
    })
}

/// Exponential map at the origin with default stability constants.
///
/// # Safety
/// `v` must point to `dim` readable doubles and `out` to `dim` writable ones.
#[no_mangle]
pub unsafe extern "C" fn hl_exp_map_origin(v: *const f64, dim: usize, out: *mut f64) -> HlStatus {
    guard(|| {
        let v = AmbientVector::new(read_slice(v, dim)?.to_vec()).map_err(geo_failure)?;
        let y = geometry::exp_map_origin(&v, &GeoConfig::default());
        if out.is_null() {
            return Err(null());
        }
        ptr::copy_nonoverlapping(y.coords().as_ptr(), out, dim);
        Ok(())
    })
}

/// Root-centred latent of a pooled vector.
///
/// # Safety
/// `pooled` and `root` must point to `dim` readable doubles and `out` to
/// `dim` writable ones.
#[no_mangle]
pub unsafe extern "C" fn hl_to_latent(pooled: *const f64, root: *const f64, dim: usize, out: *mut f64) -> HlStatus {
    guard(|| {
        let p = AmbientVector::new(read_slice(pooled, dim)?.to_vec()).map_err(geo_failure)?;
        let r = AmbientVector::new(read_slice(root, dim)?.to_vec()).map_err(geo_failure)?;
        let y = geometry::to_latent(&p, &r, &GeoConfig::default()).map_err(geo_failure)?;
        if out.is_null() {
            return Err(null());
        }
        ptr::copy_nonoverlapping(y.coords().as_ptr(), out, dim);
        Ok(())
    })
}

/// Value head with the given parameters. Pass NULL `weights` for an all-zero
/// head of width `dim`.
///
/// # Safety
/// `weights`, when non-null, must point to `dim` readable doubles; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_value_head_new(
    weights: *const f64,
    dim: usize,
    bias: f64,
    out: *mut *mut HlValueHead,
) -> HlStatus {
    guard(|| {
        let weights = if weights.is_null() {
            if dim == 0 {
                return Err((HlStatus::InvalidArgument, "dimension must be positive".into()));
            }
            vec![0.0; dim]
        } else {
            read_slice(weights, dim)?.to_vec()
        };
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err((HlStatus::InvalidArgument, "parameters must be finite".into()));
        }
        let handle = Box::new(HlValueHead { head: ValueHead { weights, bias } });
        write_out(out, Box::into_raw(handle))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hl_value_head_load(path: *const c_char, out: *mut *mut HlValueHead) -> HlStatus {
    guard(|| {
        let head = persist::load_value_head(&read_path(path)?).map_err(persist_failure)?;
        write_out(out, Box::into_raw(Box::new(HlValueHead { head })))
    })
}

/// # Safety
/// `head` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hl_value_head_save(head: *const HlValueHead, path: *const c_char) -> HlStatus {
    guard(|| {
        let head = head.as_ref().ok_or_else(null)?;
        persist::save_value_head(&head.head, &read_path(path)?).map_err(persist_failure)
    })
}

/// # Safety
/// `head` must be a live handle, `h` must point to `dim` readable doubles and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_value_head_predict(
    head: *const HlValueHead,
    h: *const f64,
    dim: usize,
    out: *mut f64,
) -> HlStatus {
    guard(|| {
        let head = head.as_ref().ok_or_else(null)?;
        let h = AmbientVector::new(read_slice(h, dim)?.to_vec()).map_err(geo_failure)?;
        let v = head.head.predict(&h).map_err(|e| (HlStatus::InvalidArgument, e.to_string()))?;
        write_out(out, v)
    })
}

/// # Safety
/// `head` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hl_value_head_free(head: *mut HlValueHead) {
    if !head.is_null() {
        drop(Box::from_raw(head));
    }
}

#[no_mangle]
pub extern "C" fn hl_search_params_default() -> HlSearchParams {
    let d = SearchConfig::default();
    HlSearchParams {
        num_sim: d.num_sim,
        exploration_c: d.exploration_c,
        mix_eta: d.mix_eta,
        prune_interval: d.prune_interval,
        prune_ratio: d.prune_ratio,
        cluster_threshold: d.cluster_threshold,
        rng_seed: d.rng_seed,
    }
}

/// Runs value-guided search on a planted-path environment. `head` may be
/// NULL, in which case an all-zero head is used.
///
/// # Safety
/// `spec` and `params` must be valid pointers, `spec->planted_path` must
/// point to `spec->depth` indices, `head` must be NULL or live, and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn hl_planted_search(
    spec: *const HlPlantedSpec,
    params: *const HlSearchParams,
    head: *const HlValueHead,
    out: *mut *mut HlTree,
) -> HlStatus {
    guard(|| {
        let spec = spec.as_ref().ok_or_else(null)?;
        let params = params.as_ref().ok_or_else(null)?;
        if spec.planted_path.is_null() && spec.depth > 0 {
            return Err(null());
        }
        let path = if spec.depth == 0 { Vec::new() } else { slice::from_raw_parts(spec.planted_path, spec.depth).to_vec() };
        let env = PlantedTree::new(PlantedTreeSpec::new(spec.branching, spec.depth, path, spec.noise), spec.seed)
            .map_err(|e| (HlStatus::InvalidArgument, e.to_string()))?;
        let cfg = SearchConfig {
            num_sim: params.num_sim,
            branching: spec.branching,
            max_depth: spec.depth,
            exploration_c: params.exploration_c,
            mix_eta: params.mix_eta,
            prune_interval: params.prune_interval,
            prune_ratio: params.prune_ratio,
            cluster_threshold: params.cluster_threshold,
            rng_seed: params.rng_seed,
            ..SearchConfig::default()
        };
        cfg.validate().map_err(|e| (HlStatus::InvalidArgument, e.to_string()))?;
        let zero;
        let valuer = match head.as_ref() {
            Some(h) => &h.head,
            None => {
                zero = ValueHead::zeros(env.spec().hidden_dim);
                &zero
            }
        };
        let tree = run_search(&env, valuer, &env, &cfg).map_err(|e| (HlStatus::Search, e.to_string()))?;
        write_out(out, Box::into_raw(Box::new(HlTree { tree })))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hl_tree_load(path: *const c_char, out: *mut *mut HlTree) -> HlStatus {
    guard(|| {
        let tree = persist::load_tree(&read_path(path)?).map_err(persist_failure)?;
        write_out(out, Box::into_raw(Box::new(HlTree { tree })))
    })
}

/// # Safety
/// `tree` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hl_tree_dump(tree: *const HlTree, path: *const c_char) -> HlStatus {
    guard(|| persist::dump_tree(tree_ref(tree)?, &read_path(path)?).map_err(persist_failure))
}

/// Writes latents, distances to the root and the pairwise distance matrix.
///
/// # Safety
/// `tree` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hl_tree_export_disk(tree: *const HlTree, path: *const c_char) -> HlStatus {
    guard(|| {
        let text = persist::disk_string(tree_ref(tree)?, &GeoConfig::default()).map_err(persist_failure)?;
        persist::write_atomic(&read_path(path)?, text.as_bytes()).map_err(persist_failure)
    })
}

/// # Safety
/// `tree` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hl_tree_free(tree: *mut HlTree) {
    if !tree.is_null() {
        drop(Box::from_raw(tree));
    }
}

/// Number of nodes, or 0 for a NULL handle.
///
/// # Safety
/// `tree` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hl_tree_node_count(tree: *const HlTree) -> usize {
    tree.as_ref().map_or(0, |t| t.tree.len())
}

/// Width of the tree's vectors, or 0 for a NULL handle.
///
/// # Safety
/// `tree` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hl_tree_hidden_dim(tree: *const HlTree) -> usize {
    tree.as_ref().map_or(0, |t| t.tree.hidden_dim())
}

/// Fraction of terminal leaves that verified correct. Returns
/// `HL_STATUS_NOT_AVAILABLE` when the tree has no terminal leaf.
///
/// # Safety
/// `tree` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hl_tree_success_rate(tree: *const HlTree, out: *mut f64) -> HlStatus {
    guard(|| match tree_ref(tree)?.success_rate() {
        Some(r) => write_out(out, r),
        None => Err((HlStatus::NotAvailable, "tree has no terminal leaves".into())),
    })
}

/// # Safety
/// `tree` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hl_tree_node_info(tree: *const HlTree, node: usize, out: *mut HlNodeInfo) -> HlStatus {
    guard(|| {
        let t = tree_ref(tree)?;
        let n = t.node(node_id(t, node)?);
        write_out(
            out,
            HlNodeInfo {
                parent: n.parent.map_or(-1, |p| p.0 as i64),
                depth: n.depth,
                child_count: n.children.len(),
                enabled: n.enabled,
                is_terminal: n.terminal.is_some(),
                terminal_reward: n.terminal.map_or(f64::NAN, |t| t.reward),
                visits: n.edge.visits,
                q: n.edge.mean_value,
                q0: n.edge.init_value,
                prior: n.edge.prior,
                value_pred: n.value_pred,
                potential: n.potential.unwrap_or(f64::NAN),
            },
        )
    })
}

/// Copies the latent of `node` into `out`, which must hold `dim` doubles.
///
/// # Safety
/// `tree` must be a live handle and `out` must point to `dim` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hl_tree_node_latent(tree: *const HlTree, node: usize, out: *mut f64, dim: usize) -> HlStatus {
    guard(|| {
        let t = tree_ref(tree)?;
        let n = t.node(node_id(t, node)?);
        if dim != n.latent.dim() {
            return Err((HlStatus::InvalidArgument, format!("buffer holds {dim}, latent has {}", n.latent.dim())));
        }
        if out.is_null() {
            return Err(null());
        }
        ptr::copy_nonoverlapping(n.latent.coords().as_ptr(), out, dim);
        Ok(())
    })
}

/// Annotates every node with its potential and step reward under `scheme`,
/// one of the `HlRewardScheme` values. Returns `HL_STATUS_UNSHAPEABLE` for a
/// potential scheme on a tree without a correct leaf; the tree is left
/// unchanged in that case.
///
/// # Safety
/// `tree` must be a live handle not used concurrently.
#[no_mangle]
pub unsafe extern "C" fn hl_tree_shape(tree: *mut HlTree, scheme: u32) -> HlStatus {
    guard(|| {
        let handle = tree.as_mut().ok_or_else(null)?;
        let scheme = scheme_from_raw(scheme)?;
        let shaping = shape_tree(&handle.tree, scheme, &[]).map_err(|e| match e {
            ShapingError::EmptyGoalSet => (HlStatus::Unshapeable, e.to_string()),
            other => (HlStatus::Geometry, other.to_string()),
        })?;
        shaping.annotate(&mut handle.tree);
        Ok(())
    })
}

/// Shaped return accumulated from the root down to `node`. Call
/// [`hl_tree_shape`] first; unshaped edges count as zero.
///
/// # Safety
/// `tree` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hl_tree_path_return(tree: *const HlTree, node: usize, out: *mut f64) -> HlStatus {
    guard(|| {
        let t = tree_ref(tree)?;
        let id = node_id(t, node)?;
        let total = t.path_from_root(id).iter().skip(1).map(|n| t.node(*n).step_reward.unwrap_or(0.0)).sum();
        write_out(out, total)
    })
}
