//! Sizing-function driven adaptive refinement.
//!
//! Indicators only enter through their ranking: the top fraction of tets is
//! asked to halve its volume, the resulting vertex field is graded, and tets
//! are split largest size ratio first until the element budget is used.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aed::{resolve_candidate, AedIndex, AedParams, Target};
use crate::delaunay::{insert_point_with_hint, locate, InsertError, Insertion, Locate};
use crate::geom::{self, Point3};
use crate::mesh::{diameter, Histogram, TetMesh};
use crate::sliver::{detect_slivers, remove_slivers, RemovalParams, THETA_HIGH, THETA_LOW};
use crate::smooth::{smooth_worst, ElasticConfig, Reference};

/// Ratios within this of 1 count as satisfied.
const RATIO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AmrError {
    #[error("{0} indicators for {1} tets")]
    Length(usize, usize),
    #[error("indicator for tet {0} is not finite")]
    NonFinite(u32),
    #[error("invalid AMR parameter: {0}")]
    Params(&'static str),
}

/// Element diameter as used for sizing.
pub fn tet_size(mesh: &TetMesh, t: u32) -> f64 {
    diameter(&mesh.tet_points(t))
}

/// Per-vertex target element diameter, linear inside tets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizingField {
    pub values: Vec<f64>,
}

impl SizingField {
    /// Minimum diameter of the tets around each vertex.
    pub fn current(mesh: &TetMesh) -> SizingField {
        let mut values = vec![f64::INFINITY; mesh.num_vertices()];
        for (t, tet) in mesh.tets() {
            let s = tet_size(mesh, t);
            for &v in &tet.v {
                values[v as usize] = values[v as usize].min(s);
            }
        }
        SizingField { values }
    }

    pub fn at_vertex(&self, v: u32) -> f64 {
        self.values[v as usize]
    }

    pub fn at_centroid(&self, mesh: &TetMesh, t: u32) -> f64 {
        mesh.tet(t).v.iter().map(|&v| self.at_vertex(v)).sum::<f64>() / 4.0
    }

    /// Barycentric interpolation in `t`; clamps to the tet's vertex range
    /// when `p` lies outside it.
    pub fn at(&self, mesh: &TetMesh, t: u32, p: Point3) -> f64 {
        let v = mesh.tet(t).v;
        let q = mesh.tet_points(t);
        let vol = geom::signed_volume(q[0], q[1], q[2], q[3]);
        if vol.abs() < f64::MIN_POSITIVE {
            return self.at_centroid(mesh, t);
        }
        let mut s = 0.0;
        for i in 0..4 {
            let mut r = q;
            r[i] = p;
            s += geom::signed_volume(r[0], r[1], r[2], r[3]) / vol * self.at_vertex(v[i]);
        }
        let (lo, hi) = v.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| {
            (lo.min(self.at_vertex(x)), hi.max(self.at_vertex(x)))
        });
        s.clamp(lo, hi)
    }

    /// Largest `|SF(a) - SF(b)| - g |a - b|` over mesh edges.
    pub fn gradation_excess(&self, mesh: &TetMesh, g: f64) -> f64 {
        mesh.edges()
            .iter()
            .map(|&[a, b]| {
                (self.at_vertex(a) - self.at_vertex(b)).abs() - g * mesh.vertex(a).dist(mesh.vertex(b))
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Lower values until `SF(b) <= SF(a) + g |a - b|` on every edge. This is
    /// the fixed point of repeated edge relaxation, reached in one
    /// shortest-path sweep.
    pub fn grade(&mut self, mesh: &TetMesh, g: f64) {
        let n = mesh.num_vertices();
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
        for [a, b] in mesh.edges() {
            adj[a as usize].push(b);
            adj[b as usize].push(a);
        }
        let mut heap: BinaryHeap<Entry> = (0..n as u32)
            .filter(|&v| self.values[v as usize].is_finite())
            .map(|v| Entry {
                key: -self.values[v as usize],
                tet: v,
            })
            .collect();
        let mut done = vec![false; n];
        while let Some(Entry { key, tet: a }) = heap.pop() {
            if done[a as usize] || -key > self.values[a as usize] {
                continue;
            }
            done[a as usize] = true;
            let pa = mesh.vertex(a);
            for &b in &adj[a as usize] {
                let cand = self.values[a as usize] + g * pa.dist(mesh.vertex(b));
                if cand < self.values[b as usize] {
                    self.values[b as usize] = cand;
                    heap.push(Entry { key: -cand, tet: b });
                }
            }
        }
    }
}

/// How indicators become a target field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizingPolicy {
    /// Fraction of tets, by indicator rank, asked to halve their volume.
    pub gamma: f64,
    /// Lipschitz bound of the target field.
    pub gradation: f64,
}

impl Default for SizingPolicy {
    fn default() -> Self {
        SizingPolicy {
            gamma: 0.3,
            gradation: 1.5,
        }
    }
}

/// Tets with the `ceil(gamma n)` largest indicators; ties go to the smaller
/// tet id. `indicators` follows `mesh.tet_ids()`.
pub fn marked_tets(mesh: &TetMesh, indicators: &[f64], gamma: f64) -> Result<Vec<u32>, AmrError> {
    let ids = mesh.tet_ids();
    if ids.len() != indicators.len() {
        return Err(AmrError::Length(indicators.len(), ids.len()));
    }
    if let Some(i) = indicators.iter().position(|x| !x.is_finite()) {
        return Err(AmrError::NonFinite(ids[i]));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| indicators[b].total_cmp(&indicators[a]).then(ids[a].cmp(&ids[b])));
    let k = ((gamma * ids.len() as f64).ceil() as usize).min(ids.len());
    let mut out: Vec<u32> = order[..k].iter().map(|&i| ids[i]).collect();
    out.sort_unstable();
    Ok(out)
}

/// Target field: marked tets want diameter `size / 2^(1/3)`, the rest keep
/// theirs; vertices take the minimum over their tets and the field is graded.
pub fn compute_target_sf(
    mesh: &TetMesh,
    indicators: &[f64],
    policy: &SizingPolicy,
) -> Result<SizingField, AmrError> {
    if !(0.0..=1.0).contains(&policy.gamma) || !(policy.gradation > 0.0) {
        return Err(AmrError::Params("gamma must lie in [0, 1] and gradation be positive"));
    }
    let marked = marked_tets(mesh, indicators, policy.gamma)?;
    let mut hot = vec![false; mesh.tet_capacity()];
    for &t in &marked {
        hot[t as usize] = true;
    }
    let shrink = 2f64.powf(-1.0 / 3.0);
    let mut values = vec![f64::INFINITY; mesh.num_vertices()];
    for (t, tet) in mesh.tets() {
        let s = tet_size(mesh, t) * if hot[t as usize] { shrink } else { 1.0 };
        for &v in &tet.v {
            values[v as usize] = values[v as usize].min(s);
        }
    }
    let mut sf = SizingField { values };
    sf.grade(mesh, policy.gradation);
    Ok(sf)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Entry {
    key: f64,
    tet: u32,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, o: &Self) -> Ordering {
        self.key.total_cmp(&o.key).then(o.tet.cmp(&self.tet))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    Circumcenter,
    /// The circumcenter was degenerate or outside the domain.
    Centroid,
    Facet,
    Segment,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub kind: SplitKind,
    pub insertion: Insertion,
}

/// Split `t` at its circumcenter, redirected to a facet or segment when the
/// point falls in a boundary entity's domain. The new vertex gets the target
/// value interpolated where it lands and `index` is updated.
pub fn split_tet(
    mesh: &mut TetMesh,
    index: &mut AedIndex,
    sf: &mut SizingField,
    t: u32,
) -> Result<Split, InsertError> {
    let p = mesh.tet_points(t);
    let centroid = mesh.centroid(t);
    let c = geom::circumsphere(p[0], p[1], p[2], p[3]).map(|s| s.center).ok();
    let target = c
        .and_then(|c| resolve_candidate(mesh, index, c, t, true))
        .unwrap_or(Target::Interior {
            point: centroid,
            hint: t,
        });
    let kind = match target {
        Target::Interior { point, .. } if Some(point) == c => SplitKind::Circumcenter,
        Target::Interior { .. } => SplitKind::Centroid,
        Target::Facet { .. } => SplitKind::Facet,
        Target::Segment { .. } => SplitKind::Segment,
    };
    let x = target.point();
    let value = match locate(mesh, x, t, false) {
        Locate::Inside(s) => sf.at(mesh, s, x),
        _ => sf.at_centroid(mesh, t),
    };
    let (constraint, hint) = match target {
        Target::Interior { hint, .. } => (None, Some(hint)),
        Target::Facet { facet, .. } => (Some(crate::delaunay::Constraint::Facet(facet)), None),
        Target::Segment { segment, .. } => (Some(crate::delaunay::Constraint::Segment(segment)), None),
    };
    let insertion = insert_point_with_hint(mesh, x, constraint, hint)?;
    index.update(mesh, &insertion);
    let v = insertion.vertex as usize;
    if sf.values.len() <= v {
        sf.values.resize(v + 1, value);
    }
    sf.values[v] = value;
    Ok(Split { kind, insertion })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmrParams {
    pub policy: SizingPolicy,
    /// Allowed growth per step as a fraction of the tet count.
    pub budget_fraction: f64,
    /// Encroachment domain anisotropy for split redirection.
    pub anisotropy: f64,
    /// Run sliver removal and localized smoothing after splitting.
    pub optimize: bool,
    /// Fraction of worst tets smoothed afterwards.
    pub smooth_fraction: f64,
    /// Relative change of the solver's monitored quantity below which a
    /// driver with a solver stops; unused here.
    pub convergence_tol: f64,
}

impl Default for AmrParams {
    fn default() -> Self {
        AmrParams {
            policy: SizingPolicy::default(),
            budget_fraction: 0.3,
            anisotropy: 10.0,
            optimize: true,
            smooth_fraction: 0.1,
            convergence_tol: 0.02,
        }
    }
}

impl AmrParams {
    pub fn validate(&self) -> Result<(), AmrError> {
        AedParams::new(self.anisotropy).map_err(|_| AmrError::Params("anisotropy must exceed 1"))?;
        if !(self.budget_fraction >= 0.0) || !(0.0..=1.0).contains(&self.smooth_fraction) {
            return Err(AmrError::Params("budget and smoothing fractions must be non-negative"));
        }
        Ok(())
    }

    /// Element budget for a mesh of `n` tets.
    pub fn budget(&self, n: usize) -> usize {
        ((1.0 + self.budget_fraction) * n as f64).floor() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmrReport {
    pub tets_before: usize,
    pub tets_after: usize,
    pub n_max: usize,
    pub marked: usize,
    pub circumcenter_splits: usize,
    pub centroid_splits: usize,
    pub facet_splits: usize,
    pub segment_splits: usize,
    /// Insertions refused (duplicate point, cavity failure).
    pub skipped: usize,
    /// Queue entries whose ratio had changed by pop time.
    pub stale: usize,
    /// Splits whose new tets ended up with a larger ratio than the cavity had.
    pub ratio_increases: usize,
    /// Largest net tet count increase of a single split.
    pub max_split_growth: usize,
    pub max_ratio_before: f64,
    pub max_ratio_after: f64,
    /// Final `current / target` ratios.
    pub ratio_histogram: Histogram,
    pub sliver_flips: usize,
    pub sliver_insertions: usize,
    pub sliver_residual: usize,
    pub smoothing_moves: usize,
}

impl AmrReport {
    pub fn splits(&self) -> usize {
        self.circumcenter_splits + self.centroid_splits + self.facet_splits + self.segment_splits
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Current sizes kept per vertex while the mesh changes.
struct Sizes {
    current: Vec<f64>,
}

impl Sizes {
    fn refresh(&mut self, mesh: &TetMesh, tets: &[u32]) {
        if self.current.len() < mesh.num_vertices() {
            self.current.resize(mesh.num_vertices(), f64::INFINITY);
        }
        let mut touched: Vec<u32> = tets.iter().flat_map(|&t| mesh.tet(t).v).collect();
        touched.sort_unstable();
        touched.dedup();
        for v in touched {
            self.current[v as usize] = mesh
                .vertex_star(v)
                .iter()
                .map(|&t| tet_size(mesh, t))
                .fold(f64::INFINITY, f64::min);
        }
    }

    fn ratio(&self, mesh: &TetMesh, target: &SizingField, t: u32) -> f64 {
        let v = mesh.tet(t).v;
        let cur: f64 = v.iter().map(|&x| self.current[x as usize]).sum();
        let tgt: f64 = v.iter().map(|&x| target.at_vertex(x)).sum();
        cur / tgt
    }
}

/// Split tets in decreasing `current / target` order until every ratio is
/// at most 1 or the mesh holds `n_max` tets, then optimize.
pub fn refine_to_sizing(
    mesh: &mut TetMesh,
    target: &mut SizingField,
    n_max: usize,
    params: &AmrParams,
) -> Result<AmrReport, AmrError> {
    params.validate()?;
    let tets_before = mesh.num_tets();
    let mut sizes = Sizes {
        current: SizingField::current(mesh).values,
    };
    let mut index = AedIndex::build(mesh, params.anisotropy);
    let mut heap: BinaryHeap<Entry> = mesh
        .tet_ids()
        .into_iter()
        .map(|t| Entry {
            key: sizes.ratio(mesh, target, t),
            tet: t,
        })
        .collect();
    let max_ratio_before = heap.peek().map_or(0.0, |e| e.key);
    let mut report = AmrReport {
        tets_before,
        tets_after: 0,
        n_max,
        marked: 0,
        circumcenter_splits: 0,
        centroid_splits: 0,
        facet_splits: 0,
        segment_splits: 0,
        skipped: 0,
        stale: 0,
        ratio_increases: 0,
        max_split_growth: 0,
        max_ratio_before,
        max_ratio_after: 0.0,
        ratio_histogram: Histogram::log(0.25, 4.0, 8),
        sliver_flips: 0,
        sliver_insertions: 0,
        sliver_residual: 0,
        smoothing_moves: 0,
    };
    while mesh.num_tets() < n_max {
        let Some(Entry { key, tet: t }) = heap.pop() else {
            break;
        };
        if !mesh.is_alive(t) {
            continue;
        }
        let r = sizes.ratio(mesh, target, t);
        if (r - key).abs() > 1e-12 * key.abs() {
            report.stale += 1;
            heap.push(Entry { key: r, tet: t });
            continue;
        }
        if r <= 1.0 + RATIO_TOL {
            break;
        }
        let count = mesh.num_tets();
        match split_tet(mesh, &mut index, target, t) {
            Ok(split) => {
                report.max_split_growth = report.max_split_growth.max(mesh.num_tets().saturating_sub(count));
                match split.kind {
                    SplitKind::Circumcenter => report.circumcenter_splits += 1,
                    SplitKind::Centroid => report.centroid_splits += 1,
                    SplitKind::Facet => report.facet_splits += 1,
                    SplitKind::Segment => report.segment_splits += 1,
                }
                let ins = &split.insertion;
                sizes.refresh(mesh, &ins.new_tets);
                let mut worst: f64 = 0.0;
                for &n in &ins.new_tets {
                    let rn = sizes.ratio(mesh, target, n);
                    worst = worst.max(rn);
                    heap.push(Entry { key: rn, tet: n });
                }
                if worst > r * (1.0 + 1e-9) {
                    report.ratio_increases += 1;
                }
            }
            Err(_) => report.skipped += 1,
        }
    }
    if params.optimize {
        let graph = detect_slivers(mesh, THETA_LOW, THETA_HIGH);
        let removal = remove_slivers(
            mesh,
            &graph,
            &RemovalParams {
                anisotropy: params.anisotropy,
                ..RemovalParams::default()
            },
        );
        report.sliver_flips = removal.flips23 + removal.flips32;
        report.sliver_insertions = removal.insertions;
        if mesh.num_vertices() > target.values.len() {
            // Vertices added by sliver removal take the value where they sit.
            let cur = SizingField::current(mesh);
            target.values.extend_from_slice(&cur.values[target.values.len()..]);
        }
        if params.smooth_fraction > 0.0 {
            // Reference cells at the current volumes keep the graded sizes.
            let cfg = ElasticConfig {
                reference: Reference::Current,
                ..ElasticConfig::default()
            };
            report.smoothing_moves = smooth_worst(mesh, &cfg, params.smooth_fraction).moves;
        }
        report.sliver_residual = detect_slivers(mesh, THETA_LOW, THETA_HIGH).len();
    }
    let sizes = Sizes {
        current: SizingField::current(mesh).values,
    };
    for t in mesh.tet_ids() {
        let r = sizes.ratio(mesh, target, t);
        report.max_ratio_after = report.max_ratio_after.max(r);
        report.ratio_histogram.add(r);
    }
    report.tets_after = mesh.num_tets();
    Ok(report)
}

/// One adaptive step: target field from the indicator ranking, splits up to
/// `n_max` tets, then optimization. `indicators` follows `mesh.tet_ids()`.
pub fn amr_step(
    mesh: &mut TetMesh,
    indicators: &[f64],
    n_max: usize,
    params: &AmrParams,
) -> Result<AmrReport, AmrError> {
    let mut sf = compute_target_sf(mesh, indicators, &params.policy)?;
    let marked = marked_tets(mesh, indicators, params.policy.gamma)?.len();
    let mut report = refine_to_sizing(mesh, &mut sf, n_max, params)?;
    report.marked = marked;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{regular_tet, structured_box};
    use crate::mesh::validate;

    fn cube(n: usize) -> TetMesh {
        let mut m = structured_box(Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 1.0, 1.0), [n; 3], 0, 0, 0)
            .build()
            .unwrap();
        m.assign_default_mobility();
        m
    }

    #[test]
    fn gradation_holds_after_grading() {
        let m = cube(4);
        let mut ind = vec![0.0; m.num_tets()];
        ind[7] = 1.0;
        let policy = SizingPolicy {
            gamma: 1.0 / m.num_tets() as f64,
            gradation: 0.2,
        };
        let sf = compute_target_sf(&m, &ind, &policy).unwrap();
        assert!(sf.gradation_excess(&m, 0.2) <= 1e-12);
        let cur = SizingField::current(&m);
        let hot = m.tet_ids()[7];
        for &v in &m.tet(hot).v {
            assert!(sf.at_vertex(v) < cur.at_vertex(v));
        }
        assert!(sf.values.iter().zip(&cur.values).all(|(a, b)| a <= b));
    }

    #[test]
    fn ranking_marks_top_fraction_with_id_ties() {
        let m = cube(3);
        let n = m.num_tets();
        let marked = marked_tets(&m, &vec![1.0; n], 0.3).unwrap();
        let k = (0.3 * n as f64).ceil() as usize;
        assert_eq!(marked, m.tet_ids()[..k].to_vec());
        assert!(marked_tets(&m, &[1.0], 0.3).is_err());
    }

    #[test]
    fn no_marks_is_a_no_op() {
        let mut m = cube(3);
        let params = AmrParams {
            policy: SizingPolicy {
                gamma: 0.0,
                gradation: 10.0,
            },
            optimize: false,
            ..AmrParams::default()
        };
        let before = m.clone();
        let n = m.num_tets();
        let r = amr_step(&mut m, &vec![0.0; n], params.budget(n), &params).unwrap();
        assert_eq!(r.splits(), 0);
        assert_eq!(m.vertices(), before.vertices());
    }

    #[test]
    fn exhausted_budget_means_no_splits() {
        let mut m = cube(3);
        let n = m.num_tets();
        let r = amr_step(&mut m, &vec![1.0; n], n, &AmrParams::default()).unwrap();
        assert_eq!(r.splits(), 0);
    }

    #[test]
    fn single_tet_splits_and_ratio_drops() {
        let mut m = regular_tet(1.0).build().unwrap();
        m.assign_default_mobility();
        let mut sf = SizingField::current(&m);
        for v in &mut sf.values {
            *v *= 0.5;
        }
        let params = AmrParams {
            optimize: false,
            ..AmrParams::default()
        };
        let r = refine_to_sizing(&mut m, &mut sf, 20, &params).unwrap();
        assert!(r.splits() >= 1);
        assert!(r.max_ratio_after < r.max_ratio_before);
        assert!(validate(&m).is_valid());
    }

    #[test]
    fn step_respects_budget_and_stays_valid() {
        let mut m = cube(4);
        let n = m.num_tets();
        let ind: Vec<f64> = m.tet_ids().iter().map(|&t| m.centroid(t).x).collect();
        let params = AmrParams::default();
        let r = amr_step(&mut m, &ind, params.budget(n), &params).unwrap();
        assert!(r.splits() > 0);
        assert!(validate(&m).is_valid());
        // One insertion's cavity of overshoot at most.
        assert!(m.num_tets() <= params.budget(n) + 64, "{} vs {}", m.num_tets(), params.budget(n));
        assert!(r.to_json().contains("\"tets_after\""));
    }
}
