//! Sequential cuboid extraction from a point cloud.
//!
//! Fitting runs in a normalized frame whose longest bounding-box side is
//! `working_extent` units long, so the kernel bandwidths are independent of
//! the input's units. Results are mapped back to object coordinates.

mod space;
mod symmetry;

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use space::{assign_within, free_space, largest_component, median_spacing, subsample, Frame};
pub use symmetry::{detect_symmetry, reflection_distance};

use crate::energy::{EnergyConfig, EnergyProblem};
use crate::error::{Error, Result};
use crate::geom::{mirror_primitive, Aabb, Plane, PointCloud, PointIndex, Primitive};
use crate::optim::{alternate_fit_problem, AlternationConfig, AlternationOutcome, LbfgsConfig};
use crate::synth::{derive_seed, rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParserConfig {
    /// Stop once this fraction of the points is fitted.
    pub coverage: f64,
    pub max_primitives: usize,
    /// Random restarts per round.
    pub restarts: usize,
    /// Point-to-primitive assignment distance, fraction of the bbox diagonal.
    pub fit_distance: f64,
    pub coarse_sigma: f64,
    pub fine_sigma: f64,
    /// Joint refinement after every this many rounds; 0 disables it.
    pub refine_period: usize,
    pub detect_symmetry: bool,
    /// Allowed excess of the mirror distance over the point spacing,
    /// fraction of the bbox diagonal.
    pub symmetry_threshold: f64,
    /// Candidates explaining fewer than this fraction of the points are
    /// rejected.
    pub min_fit_fraction: f64,
    /// Longest bbox side in the fitting frame.
    pub working_extent: f64,
    /// Resolution of the free-space occupancy grid.
    pub free_grid: usize,
    /// Free-space cells added outside the bounding box on every side.
    pub free_pad: usize,
    /// Side lengths are softly capped at this multiple of the bounding-box
    /// diagonal.
    pub max_scale: f64,
    /// A grid cell is free when no point lies within this many median point
    /// spacings of its center.
    pub free_radius: f64,
    /// Points used for fitting; larger clouds are subsampled.
    pub max_points: usize,
    pub max_free_points: usize,
    /// Fitted angles at or below this many radians are zeroed.
    pub rotation_snap: f64,
    /// After each fit, reset the side lengths and center to the extent (along
    /// the primitive's own axes) of the largest connected group of points
    /// inside it or within `2 · fine_sigma` of it.
    pub snap_extent: bool,
    pub seed: u64,
    pub energy: EnergyConfig,
    pub alternation: AlternationConfig,
}

impl Default for ParserConfig {
    fn default() -> Self {
        ParserConfig {
            coverage: 0.97,
            max_primitives: 20,
            restarts: 10,
            fit_distance: 0.03,
            coarse_sigma: 2.0,
            fine_sigma: 0.5,
            refine_period: 3,
            detect_symmetry: true,
            symmetry_threshold: 0.02,
            min_fit_fraction: 0.01,
            working_extent: 30.0,
            free_grid: 30,
            free_pad: 6,
            max_scale: 1.0,
            free_radius: 2.0,
            max_points: 1500,
            max_free_points: 1500,
            rotation_snap: 2f64.to_radians(),
            snap_extent: true,
            seed: 0,
            energy: EnergyConfig::default(),
            alternation: AlternationConfig {
                lbfgs: LbfgsConfig {
                    max_iterations: 40,
                    f_rel_tol: 1e-7,
                    ..LbfgsConfig::default()
                },
                ..AlternationConfig::default()
            },
        }
    }
}

impl ParserConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.coverage > 0.0 && self.coverage <= 1.0) {
            return Err(Error::invalid("coverage must be in (0, 1]"));
        }
        if self.restarts == 0 || self.max_primitives == 0 {
            return Err(Error::invalid("restarts and max_primitives must be at least 1"));
        }
        if !(self.fit_distance > 0.0) {
            return Err(Error::invalid("fit_distance must be positive"));
        }
        if !(self.coarse_sigma > 0.0 && self.fine_sigma > 0.0 && self.working_extent > 0.0) {
            return Err(Error::invalid("bandwidths and working extent must be positive"));
        }
        if self.free_grid == 0 || self.max_points < 10 {
            return Err(Error::invalid("free_grid must be >= 1 and max_points >= 10"));
        }
        self.energy.validate()?;
        self.alternation.validate()
    }
}

/// Ordered primitives with the indices of the points each one explains.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveSet {
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub fitted: Vec<Vec<usize>>,
    /// For generated mirror images, the index of the source primitive.
    #[serde(default)]
    pub mirror_of: Vec<Option<usize>>,
    #[serde(default)]
    pub symmetry_plane: Option<Plane>,
}

impl PrimitiveSet {
    pub fn new(primitives: Vec<Primitive>) -> Self {
        let n = primitives.len();
        PrimitiveSet {
            primitives,
            fitted: vec![Vec::new(); n],
            mirror_of: vec![None; n],
            symmetry_plane: None,
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn fitted_count(&self) -> usize {
        self.fitted.iter().map(Vec::len).sum()
    }

    /// Checks parallel-array lengths and that fitted sets are disjoint and
    /// within `0..n_points`.
    pub fn validate(&self, n_points: usize) -> Result<()> {
        let n = self.primitives.len();
        if self.fitted.len() != n || self.mirror_of.len() != n {
            return Err(Error::ShapeMismatch("primitive set arrays differ in length".into()));
        }
        let mut seen = vec![false; n_points];
        for f in &self.fitted {
            for &i in f {
                if i >= n_points || seen[i] {
                    return Err(Error::invalid(format!("fitted index {i} out of range or shared")));
                }
                seen[i] = true;
            }
        }
        for p in &self.primitives {
            p.validate()?;
        }
        Ok(())
    }
}

/// Outcome of one alternating fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub energy: f64,
    pub iterations: usize,
    pub delta: f64,
    pub converged: bool,
}

impl From<&AlternationOutcome> for FitSummary {
    fn from(o: &AlternationOutcome) -> Self {
        FitSummary {
            energy: o.energy,
            iterations: o.iterations,
            delta: o.delta,
            converged: o.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// Coarse restarts of every attempt in this round, in order.
    pub restarts: Vec<FitSummary>,
    pub fine: Option<FitSummary>,
    pub attempts: usize,
    pub accepted: bool,
    pub newly_fitted: usize,
    pub mirrored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub set: PrimitiveSet,
    /// Fraction of the fitting points explained.
    pub coverage: f64,
    pub coverage_reached: bool,
    pub warning: Option<String>,
    pub rounds: Vec<RoundReport>,
    /// Fitting-frame `E_w` of each primitive when it was accepted.
    pub energies: Vec<f64>,
}

/// Fitting state in the normalized frame over the subsampled points.
struct Workspace {
    frame: Frame,
    points: Vec<Vector3<f64>>,
    /// Index into the caller's cloud of each working point.
    source: Vec<usize>,
    /// Every caller point in the fitting frame.
    all: Vec<Vector3<f64>>,
    free: Vec<Vector3<f64>>,
    eps: f64,
    /// Free-space radius; points closer than this are treated as connected.
    link: f64,
    /// Layer thickness for [`settle_layers`].
    grain: f64,
    alt: AlternationConfig,
    owner: Vec<Option<usize>>,
    prims: Vec<Primitive>,
    fitted: Vec<Vec<usize>>,
    mirror_of: Vec<Option<usize>>,
    plane: Option<Plane>,
}

impl Workspace {
    fn new(cloud: &PointCloud, cfg: &ParserConfig) -> Result<Workspace> {
        cfg.validate()?;
        if cloud.len() < 10 {
            return Err(Error::invalid(format!("need at least 10 points, got {}", cloud.len())));
        }
        if cloud.points.iter().chain(&cloud.negatives).any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("non-finite point coordinates"));
        }
        let bounds = Aabb::from_points(&cloud.points).ok_or(Error::EmptyTargetCloud)?;
        let frame = Frame::fit(&bounds, cfg.working_extent);
        let all: Vec<_> = cloud.points.iter().map(|p| frame.to_work(p)).collect();
        let index = PointIndex::new(&all);
        let wb = Aabb::from_points(&all).ok_or(Error::EmptyTargetCloud)?;
        let half_cell = 0.5 * (wb.extent() / cfg.free_grid as f64).norm();
        let radius = half_cell.max(cfg.free_radius * median_spacing(&index));
        let (mut inside, shell) = free_space(&all, &index, cfg.free_grid, cfg.free_pad, radius);
        inside.extend(cloud.negatives.iter().map(|p| frame.to_work(p)));
        // the shell is large; give it at most half of the budget
        let shell_cap = (cfg.max_free_points / 2).max(cfg.max_free_points.saturating_sub(inside.len()));
        let shell_keep = subsample(shell.len(), shell_cap, derive_seed(cfg.seed, &[3]));
        let inside_cap = cfg.max_free_points - shell_keep.len().min(cfg.max_free_points);
        let inside_keep = subsample(inside.len(), inside_cap, derive_seed(cfg.seed, &[1]));
        let free = inside_keep
            .into_iter()
            .map(|i| inside[i])
            .chain(shell_keep.into_iter().map(|i| shell[i]))
            .collect();
        let source = subsample(all.len(), cfg.max_points, derive_seed(cfg.seed, &[0]));
        let points: Vec<_> = source.iter().map(|&i| all[i]).collect();
        let grain = GRAIN_SPACINGS * median_spacing(&PointIndex::new(&points));
        let plane = if cfg.detect_symmetry {
            detect_symmetry(&cloud.points, cfg.symmetry_threshold).map(|p| frame.plane_to_work(&p))
        } else {
            None
        };
        Ok(Workspace {
            frame,
            owner: vec![None; points.len()],
            points,
            source,
            all,
            free,
            eps: cfg.fit_distance * wb.diagonal(),
            link: radius,
            grain,
            alt: AlternationConfig {
                max_scale: Some(cfg.max_scale * wb.diagonal()),
                ..cfg.alternation
            },
            prims: Vec::new(),
            fitted: Vec::new(),
            mirror_of: Vec::new(),
            plane,
        })
    }

    fn fitted_count(&self) -> usize {
        self.owner.iter().filter(|o| o.is_some()).count()
    }

    fn unfitted(&self) -> Vec<usize> {
        (0..self.points.len()).filter(|&i| self.owner[i].is_none()).collect()
    }

    fn claim(&mut self, t: usize, candidates: &[usize]) -> usize {
        let prim = self.prims[t];
        let mut n = 0;
        for &i in candidates {
            if self.owner[i].is_none() && prim.distance(&self.points[i]) <= self.eps {
                self.owner[i] = Some(t);
                self.fitted[t].push(i);
                n += 1;
            }
        }
        self.fitted[t].sort_unstable();
        n
    }

    fn push(&mut self, prim: Primitive, mirror_of: Option<usize>) -> usize {
        self.prims.push(prim);
        self.fitted.push(Vec::new());
        self.mirror_of.push(mirror_of);
        self.prims.len() - 1
    }

    fn import(&mut self, set: &PrimitiveSet) -> Result<()> {
        set.validate(self.all.len())?;
        let mut pos = vec![usize::MAX; self.all.len()];
        for (k, &i) in self.source.iter().enumerate() {
            pos[i] = k;
        }
        for (t, p) in set.primitives.iter().enumerate() {
            self.push(self.frame.prim_to_work(p), set.mirror_of[t]);
            for &i in &set.fitted[t] {
                if pos[i] != usize::MAX {
                    self.owner[pos[i]] = Some(t);
                    self.fitted[t].push(pos[i]);
                }
            }
            self.fitted[t].sort_unstable();
        }
        self.plane = set.symmetry_plane.map(|p| self.frame.plane_to_work(&p));
        Ok(())
    }

    /// Maps back to object coordinates; points outside the fitting subsample
    /// go to the first primitive within the assignment distance.
    fn export(&self) -> PrimitiveSet {
        let mut fitted: Vec<Vec<usize>> = self
            .fitted
            .iter()
            .map(|f| f.iter().map(|&k| self.source[k]).collect())
            .collect();
        let mut used = vec![false; self.all.len()];
        for &k in &self.source {
            used[k] = true;
        }
        for (i, p) in self.all.iter().enumerate() {
            if used[i] {
                continue;
            }
            if let Some(t) = self.prims.iter().position(|q| q.distance(p) <= self.eps) {
                fitted[t].push(i);
            }
        }
        fitted.iter_mut().for_each(|f| f.sort_unstable());
        PrimitiveSet {
            primitives: self.prims.iter().map(|p| self.frame.prim_to_world(p)).collect(),
            fitted,
            mirror_of: self.mirror_of.clone(),
            symmetry_plane: self.plane.map(|p| self.frame.plane_to_world(&p)),
        }
    }

    fn coordinates(&self, idx: impl IntoIterator<Item = usize>) -> Vec<Vector3<f64>> {
        idx.into_iter().map(|i| self.points[i]).collect()
    }

    /// Adds the mirror image of primitive `t` unless it would duplicate an
    /// existing primitive.
    fn add_mirror(&mut self, t: usize, cfg: &ParserConfig) -> bool {
        let Some(plane) = self.plane else {
            return false;
        };
        if self.prims.len() >= cfg.max_primitives {
            return false;
        }
        let image = mirror_primitive(&self.prims[t], &plane);
        let near_self = {
            let cs = image.corners();
            self.prims[t]
                .corners()
                .iter()
                .all(|c| cs.iter().any(|m| (m - c).norm() <= self.eps))
        };
        if let Some(sym) = symmetrize(&self.prims[t], &plane).filter(|_| near_self) {
            // a part crossing the plane is its own mirror image
            let mut pool = std::mem::take(&mut self.fitted[t]);
            for &i in &pool {
                self.owner[i] = None;
            }
            pool.extend(self.unfitted());
            pool.sort_unstable();
            pool.dedup();
            let mut sym = settle_layers(&sym, &self.coordinates(pool.iter().copied()), self.grain);
            sym.translation[plane.axis.index()] = plane.offset;
            self.prims[t] = sym;
            self.claim(t, &pool);
            return false;
        }
        let mut m = image;
        let dup = self
            .prims
            .iter()
            .any(|p| (p.translation - m.translation).norm() <= self.eps);
        if dup {
            return false;
        }
        self.prims[t].symmetric = true;
        m.symmetric = true;
        let j = self.push(m, Some(t));
        let free = self.unfitted();
        self.claim(j, &free);
        true
    }

    fn refresh_mirrors(&mut self, t: usize) {
        let Some(plane) = self.plane else { return };
        for j in 0..self.prims.len() {
            if self.mirror_of[j] == Some(t) {
                let mut m = mirror_primitive(&self.prims[t], &plane);
                m.symmetric = true;
                self.prims[j] = m;
                let free = self.unfitted();
                self.claim(j, &free);
            }
        }
    }

    /// Re-fits each source primitive at the fine bandwidth against its own
    /// points plus all unfitted ones, the rest held fixed. Returns each
    /// refined primitive's energy before and after.
    fn refine(&mut self, cfg: &ParserConfig) -> Result<Vec<(f64, f64)>> {
        let fine = cfg.energy.with_sigma(cfg.fine_sigma);
        let mut out = Vec::new();
        for t in 0..self.prims.len() {
            if self.mirror_of[t].is_some() {
                continue;
            }
            // points claimed early but lying on a later part belong to that part
            let prims = &self.prims;
            let mut own: Vec<usize> = self.fitted[t]
                .iter()
                .copied()
                .filter(|&i| {
                    let p = &self.points[i];
                    let d = prims[t].distance(p);
                    prims.iter().enumerate().all(|(j, o)| j == t || o.distance(p) >= d)
                })
                .collect();
            own.extend(self.unfitted());
            own.sort_unstable();
            if own.is_empty() {
                continue;
            }
            let q = self.coordinates(own);
            let mut qneg = self.free.clone();
            qneg.extend(
                (0..self.points.len())
                    .filter(|&i| self.owner[i].is_some_and(|o| o != t))
                    .map(|i| self.points[i]),
            );
            let problem = EnergyProblem::new(&q, &qneg, &fine)?;
            let before = problem.energy(&self.prims[t]);
            let fit = alternate_fit_problem(&self.prims[t], &problem, &self.alt)?;
            let mut snapped = canonicalize(&fit.primitive, cfg.rotation_snap);
            if cfg.snap_extent {
                snapped = tighten(&snapped, &q, 2.0 * cfg.fine_sigma, self.link, self.grain);
            }
            let mut prim = self.prims[t];
            let mut after = before;
            let candidates = if cfg.snap_extent { vec![snapped] } else { vec![snapped, fit.primitive] };
            for cand in candidates {
                let e = problem.energy(&cand);
                if e <= before {
                    prim = cand;
                    after = e;
                    break;
                }
            }
            prim.symmetric = self.prims[t].symmetric;
            self.prims[t] = prim;
            let free = self.unfitted();
            self.claim(t, &free);
            self.refresh_mirrors(t);
            out.push((before, after));
        }
        Ok(out)
    }
}

/// Wraps angles, folds a single-axis rotation into `[-π/4, π/4]` by the
/// cuboid's quarter-turn symmetry (swapping the two affected side lengths),
/// and zeroes angles at or below `snap`.
pub fn canonicalize(prim: &Primitive, snap: f64) -> Primitive {
    let mut p = *prim;
    p.normalize_rotation(snap);
    let rotated: Vec<usize> = (0..3).filter(|&i| p.rotation[i] != 0.0).collect();
    if let [i] = rotated[..] {
        let mut a = p.rotation[i];
        if a > FRAC_PI_2 {
            a -= PI;
        } else if a <= -FRAC_PI_2 {
            a += PI;
        }
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        if a > FRAC_PI_4 {
            a -= FRAC_PI_2;
            p.scale.swap_rows(j, k);
        } else if a < -FRAC_PI_4 {
            a += FRAC_PI_2;
            p.scale.swap_rows(j, k);
        }
        p.rotation[i] = a;
        p.normalize_rotation(snap);
    }
    p
}

/// Box spanned, along the primitive's axes, by the points within `margin`
/// of its faces (per axis). With `link`, only the largest connected group of
/// those points counts. Unchanged when fewer than four points qualify.
pub fn snap_to_points(prim: &Primitive, points: &[Vector3<f64>], margin: f64, link: Option<f64>) -> Primitive {
    let r = prim.rotation_matrix();
    let half = prim.scale / 2.0 + Vector3::repeat(margin);
    let mut local: Vec<Vector3<f64>> = points
        .iter()
        .map(|q| r.transpose() * (q - prim.translation))
        .filter(|l| (0..3).all(|a| l[a].abs() <= half[a]))
        .collect();
    if let Some(link) = link {
        local = largest_component(&local, link).into_iter().map(|i| local[i]).collect();
    }
    if local.len() < 4 {
        return *prim;
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for l in &local {
        lo = lo.inf(l);
        hi = hi.sup(l);
    }
    let mut out = *prim;
    out.scale = (hi - lo).map(|e| e.max(1e-6));
    out.translation = prim.translation + r * ((hi + lo) / 2.0);
    out
}

/// For a primitive whose box crosses `plane`: the box symmetric about the
/// plane that encloses it, with rotations about the in-plane axes dropped.
/// `None` when the box lies on one side.
pub fn symmetrize(prim: &Primitive, plane: &Plane) -> Option<Primitive> {
    let k = plane.axis.index();
    let b = prim.bounds();
    if !(b.min[k] < plane.offset && plane.offset < b.max[k]) {
        return None;
    }
    let mut out = *prim;
    for i in (0..3).filter(|&i| i != k) {
        out.rotation[i] = 0.0;
        out.axis_flags[i] = false;
    }
    let reach = (b.max[k] - plane.offset).max(plane.offset - b.min[k]);
    // the box's own axis k is the plane normal once only rotation about k remains
    out.scale[k] = 2.0 * reach;
    out.translation[k] = plane.offset;
    Some(out)
}

/// [`snap_to_points`] followed by [`settle_layers`].
fn tighten(prim: &Primitive, points: &[Vector3<f64>], margin: f64, link: f64, grain: f64) -> Primitive {
    settle_layers(&snap_to_points(prim, points, margin, Some(link)), points, grain)
}

/// Median nearest-neighbor distance on a jittered grid is below the grid
/// step; this scales it back up.
const GRAIN_SPACINGS: f64 = 1.5;

/// Moves each face by layers of thickness `grain`. A face first advances
/// outward while the layer beyond it is mostly filled, then retreats while
/// the layer inside it is mostly empty; a layer is filled when at least half
/// of its `2·grain` cross-section cells hold a point. The box is then shrunk
/// to the points it contains. Grows parts that a smooth fit left short and
/// drops the ends of neighboring parts that it swallowed.
pub fn settle_layers(prim: &Primitive, points: &[Vector3<f64>], grain: f64) -> Primitive {
    if !(grain > 0.0) || points.is_empty() {
        return *prim;
    }
    let r = prim.rotation_matrix();
    let half = prim.scale / 2.0;
    let local: Vec<Vector3<f64>> = points.iter().map(|q| r.transpose() * (q - prim.translation)).collect();
    let cell = 2.0 * grain;
    let filled = |lo: &Vector3<f64>, hi: &Vector3<f64>, a: usize, from: f64, to: f64| {
        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
        let nb = ((hi[b] - lo[b]) / cell).ceil().max(1.0) as usize;
        let nc = ((hi[c] - lo[c]) / cell).ceil().max(1.0) as usize;
        let mut occ = vec![false; nb * nc];
        for l in &local {
            if l[a] < from || l[a] > to || [b, c].iter().any(|&k| l[k] < lo[k] || l[k] > hi[k]) {
                continue;
            }
            let ib = (((l[b] - lo[b]) / cell) as usize).min(nb - 1);
            let ic = (((l[c] - lo[c]) / cell) as usize).min(nc - 1);
            occ[ib * nc + ic] = true;
        }
        2 * occ.iter().filter(|&&o| o).count() >= occ.len()
    };
    let (mut lo, mut hi) = (-half, half);
    for _ in 0..GROW_LAYERS {
        let mut changed = false;
        for a in 0..3 {
            if filled(&lo, &hi, a, hi[a], hi[a] + grain) {
                hi[a] += grain;
                changed = true;
            }
            if filled(&lo, &hi, a, lo[a] - grain, lo[a]) {
                lo[a] -= grain;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    loop {
        let mut changed = false;
        for a in 0..3 {
            while hi[a] - lo[a] > grain && !filled(&lo, &hi, a, hi[a] - grain, hi[a]) {
                hi[a] -= grain;
                changed = true;
            }
            while hi[a] - lo[a] > grain && !filled(&lo, &hi, a, lo[a], lo[a] + grain) {
                lo[a] += grain;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if lo == -half && hi == half {
        return *prim;
    }
    let mut blo = Vector3::repeat(f64::INFINITY);
    let mut bhi = Vector3::repeat(f64::NEG_INFINITY);
    let mut n = 0;
    for l in local.iter().filter(|l| (0..3).all(|k| l[k] >= lo[k] && l[k] <= hi[k])) {
        blo = blo.inf(l);
        bhi = bhi.sup(l);
        n += 1;
    }
    if n < 4 {
        return *prim;
    }
    let mut out = *prim;
    out.scale = (bhi - blo).map(|e| e.max(1e-6));
    out.translation = prim.translation + r * ((bhi + blo) / 2.0);
    out
}

/// Cap on outward layer steps per face.
const GROW_LAYERS: usize = 64;

/// Random restart centered on a random point of `points`, side lengths
/// uniform in `[0.1, 0.5]` of the extent of `bounds`, no rotation.
pub fn random_init(points: &[Vector3<f64>], bounds: &Aabb, rng: &mut impl Rng) -> Primitive {
    let e = bounds.extent();
    let t = if points.is_empty() { bounds.center() } else { points[rng.random_range(0..points.len())] };
    let s = e.map(|v| (rng.random_range(0.1..0.5) * v).max(1e-3));
    Primitive::axis_aligned(s, t)
}

/// Best of `cfg.restarts` coarse fits, re-fitted at the fine bandwidth.
fn fit_round(
    q: &[Vector3<f64>],
    qneg: &[Vector3<f64>],
    cfg: &ParserConfig,
    alt: &AlternationConfig,
    link: f64,
    grain: f64,
    seed: u64,
    report: &mut RoundReport,
) -> Result<(Primitive, f64)> {
    let coarse = EnergyProblem::new(q, qneg, &cfg.energy.with_sigma(cfg.coarse_sigma))?;
    let bounds = Aabb::from_points(q).ok_or(Error::EmptyTargetCloud)?;
    let fits: Vec<Option<AlternationOutcome>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let init = random_init(q, &bounds, &mut rng(derive_seed(seed, &[r as u64])));
            alternate_fit_problem(&init, &coarse, alt).ok()
        })
        .collect();
    let mut best: Option<&AlternationOutcome> = None;
    for f in fits.iter().flatten() {
        report.restarts.push(f.into());
        if f.energy.is_finite() && best.is_none_or(|b| f.energy < b.energy) {
            best = Some(f);
        }
    }
    let best = best.ok_or(Error::NonFiniteObjective)?;
    let fine = EnergyProblem::new(q, qneg, &cfg.energy.with_sigma(cfg.fine_sigma))?;
    let refit = alternate_fit_problem(&best.primitive, &fine, alt)?;
    report.fine = Some((&refit).into());
    let mut prim = canonicalize(&refit.primitive, cfg.rotation_snap);
    if cfg.snap_extent {
        prim = tighten(&prim, q, 2.0 * cfg.fine_sigma, link, grain);
    }
    Ok((prim, fine.energy(&prim)))
}

/// Extracts cuboids one at a time until `coverage` of the points are
/// explained or `max_primitives` is reached.
///
/// Each round fits `restarts` random initializations at the coarse bandwidth
/// against the unexplained points, with free space and already explained
/// points as the negative set, keeps the lowest energy, re-fits it at the
/// fine bandwidth and claims the points within the assignment distance.
pub fn fit_primitives(cloud: &PointCloud, cfg: &ParserConfig) -> Result<FitReport> {
    let mut ws = Workspace::new(cloud, cfg)?;
    let n = ws.points.len();
    let target = (cfg.coverage * n as f64).ceil() as usize;
    let min_fit = ((cfg.min_fit_fraction * n as f64).ceil() as usize).max(1);
    let mut rounds = Vec::new();
    let mut energies = Vec::new();
    let mut warning = None;

    while ws.fitted_count() < target && ws.prims.len() < cfg.max_primitives {
        let remaining = ws.unfitted();
        let q = ws.coordinates(remaining.iter().copied());
        let mut qneg = ws.free.clone();
        qneg.extend((0..n).filter(|&i| ws.owner[i].is_some()).map(|i| ws.points[i]));
        let mut report = RoundReport {
            restarts: Vec::new(),
            fine: None,
            attempts: 0,
            accepted: false,
            newly_fitted: 0,
            mirrored: false,
        };
        let mut accepted = None;
        for attempt in 0..2u64 {
            report.attempts += 1;
            let seed = derive_seed(cfg.seed, &[2, rounds.len() as u64, attempt]);
            let (prim, energy) = fit_round(&q, &qneg, cfg, &ws.alt, ws.link, ws.grain, seed, &mut report)?;
            let hits = remaining
                .iter()
                .filter(|&&i| prim.distance(&ws.points[i]) <= ws.eps)
                .count();
            if hits >= min_fit {
                accepted = Some((prim, energy));
                break;
            }
        }
        let Some((prim, energy)) = accepted else {
            warning = Some(format!(
                "stopped after {} primitives: candidate explained fewer than {min_fit} points",
                ws.prims.len()
            ));
            rounds.push(report);
            break;
        };
        let t = ws.push(prim, None);
        report.accepted = true;
        report.newly_fitted = ws.claim(t, &remaining);
        energies.push(energy);
        report.mirrored = ws.add_mirror(t, cfg);
        rounds.push(report);
        let done = rounds.iter().filter(|r| r.accepted).count();
        if cfg.refine_period > 0 && done % cfg.refine_period == 0 {
            ws.refine(cfg)?;
        }
    }

    let fitted = ws.fitted_count();
    let coverage = fitted as f64 / n as f64;
    let coverage_reached = fitted >= target;
    if !coverage_reached && warning.is_none() {
        warning = Some(format!(
            "coverage {:.3} below target {} after {} primitives",
            coverage,
            cfg.coverage,
            ws.prims.len()
        ));
    }
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(FitReport {
        set: ws.export(),
        coverage,
        coverage_reached,
        warning,
        rounds,
        energies,
    })
}

/// Fitted-points assignment: indices of `points` within `eps` times the
/// points' bounding-box diagonal of the primitive's solid.
pub fn assign_points(points: &[Vector3<f64>], prim: &Primitive, eps: f64) -> Vec<usize> {
    let diag = Aabb::from_points(points).map_or(0.0, |b| b.diagonal());
    assign_within(points, prim, eps * diag)
}

/// Joint refinement result.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineReport {
    pub set: PrimitiveSet,
    /// Fitting-frame energy of each refined source primitive before and after.
    pub energies: Vec<(f64, f64)>,
}

/// Re-optimizes each primitive of `set` in turn at the fine bandwidth with
/// the others fixed. `set.fitted` indexes `cloud.points`.
pub fn refine_set_report(set: &PrimitiveSet, cloud: &PointCloud, cfg: &ParserConfig) -> Result<RefineReport> {
    if set.is_empty() {
        return Err(Error::EmptyPrimitiveSet);
    }
    let mut ws = Workspace::new(cloud, cfg)?;
    ws.import(set)?;
    let energies = ws.refine(cfg)?;
    Ok(RefineReport {
        set: ws.export(),
        energies,
    })
}

pub fn refine_set(set: &PrimitiveSet, cloud: &PointCloud, cfg: &ParserConfig) -> Result<PrimitiveSet> {
    refine_set_report(set, cloud, cfg).map(|r| r.set)
}
