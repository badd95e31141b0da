//! Coarsening partitions, stratum assignment and coarsened exact matching.
//!
//! A subject is matched when its cell holds at least one subject of each
//! arm. Matched treated subjects carry weight 1; a matched control carries
//! the ratio of treated to control subjects still at risk in its cell.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{pinv, Real};
use crate::survival::{Arm, Cohort};

/// How a partition was specified; this is also its JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, bound(deserialize = "T: Real"))]
pub enum SchemeSpec<T> {
    Grid {
        box_lo: Vec<T>,
        box_hi: Vec<T>,
        bins_per_dim: usize,
        binary_dims: usize,
    },
    Edges {
        edges: Vec<Vec<T>>,
        binary_dims: usize,
    },
}

/// Finite partition of `𝒳 = (box over continuous dims) × {0,1}^binary_dims`
/// into half-open cells `(lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseningScheme<T> {
    edges: Vec<Vec<T>>,
    binary_dims: usize,
    spec: SchemeSpec<T>,
}

/// Multi-index of a cell: bin index per continuous dimension, then the
/// literal 0/1 value per binary dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StratumId(pub Vec<u32>);

impl<T: Real> CoarseningScheme<T> {
    /// Uniform `bins_per_dim` bins on each continuous coordinate of the box.
    pub fn grid(box_lo: &[T], box_hi: &[T], bins_per_dim: usize, binary_dims: usize) -> Result<Self> {
        if bins_per_dim == 0 {
            return Err(Error::invalid("bins_per_dim must be positive"));
        }
        if box_lo.len() != box_hi.len() {
            return Err(Error::invalid(format!(
                "box_lo has {} coordinates but box_hi has {}",
                box_lo.len(),
                box_hi.len()
            )));
        }
        let m = T::of_count(bins_per_dim);
        let mut edges = Vec::with_capacity(box_lo.len());
        for (d, (&lo, &hi)) in box_lo.iter().zip(box_hi).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::invalid(format!(
                    "dimension {d}: need finite box_lo < box_hi, got {lo} and {hi}"
                )));
            }
            let width = hi - lo;
            let mut e: Vec<T> = (0..bins_per_dim)
                .map(|j| lo + width * T::of_count(j) / m)
                .collect();
            e.push(hi);
            edges.push(e);
        }
        let spec = SchemeSpec::Grid {
            box_lo: box_lo.to_vec(),
            box_hi: box_hi.to_vec(),
            bins_per_dim,
            binary_dims,
        };
        Self::checked(edges, binary_dims, spec)
    }

    /// Explicit strictly increasing bin edges per continuous dimension.
    pub fn from_edges(edges: Vec<Vec<T>>, binary_dims: usize) -> Result<Self> {
        let spec = SchemeSpec::Edges {
            edges: edges.clone(),
            binary_dims,
        };
        Self::checked(edges, binary_dims, spec)
    }

    pub fn from_spec(spec: SchemeSpec<T>) -> Result<Self> {
        match spec {
            SchemeSpec::Grid {
                box_lo,
                box_hi,
                bins_per_dim,
                binary_dims,
            } => Self::grid(&box_lo, &box_hi, bins_per_dim, binary_dims),
            SchemeSpec::Edges { edges, binary_dims } => Self::from_edges(edges, binary_dims),
        }
    }

    fn checked(edges: Vec<Vec<T>>, binary_dims: usize, spec: SchemeSpec<T>) -> Result<Self> {
        for (d, e) in edges.iter().enumerate() {
            if e.len() < 2 {
                return Err(Error::invalid(format!("dimension {d}: need at least 2 edges")));
            }
            if e.iter().any(|x| !x.is_finite()) || e.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::invalid(format!(
                    "dimension {d}: edges must be finite and strictly increasing"
                )));
            }
        }
        Ok(Self {
            edges,
            binary_dims,
            spec,
        })
    }

    pub fn spec(&self) -> &SchemeSpec<T> {
        &self.spec
    }

    pub fn continuous_dims(&self) -> usize {
        self.edges.len()
    }

    pub fn binary_dims(&self) -> usize {
        self.binary_dims
    }

    /// Covariate dimension `d`.
    pub fn dim(&self) -> usize {
        self.edges.len() + self.binary_dims
    }

    pub fn edges(&self) -> &[Vec<T>] {
        &self.edges
    }

    /// `#𝔸`, saturating at `u64::MAX`.
    pub fn cell_count(&self) -> u64 {
        let cont = self
            .edges
            .iter()
            .fold(1u64, |acc, e| acc.saturating_mul((e.len() - 1) as u64));
        let bin = 1u64.checked_shl(self.binary_dims as u32).unwrap_or(u64::MAX);
        cont.saturating_mul(if self.binary_dims >= 64 { u64::MAX } else { bin })
    }

    /// `d_n = max_a diam(a)`; binary coordinates are constant within a cell.
    pub fn max_diameter(&self) -> T {
        self.edges
            .iter()
            .map(|e| {
                let w = e
                    .windows(2)
                    .map(|w| w[1] - w[0])
                    .fold(T::zero(), T::max);
                w * w
            })
            .fold(T::zero(), |a, b| a + b)
            .sqrt()
    }

    /// Cell containing `x`, or `None` when `x` lies outside `𝒳`.
    pub fn assign(&self, x: &[T]) -> Result<Option<StratumId>> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "covariate vector has length {} but the scheme expects {}",
                x.len(),
                self.dim()
            )));
        }
        let mut idx = Vec::with_capacity(x.len());
        for (e, &v) in self.edges.iter().zip(x) {
            // first edge >= v; NaN never compares so it lands at 0
            let k = e.partition_point(|&edge| edge < v);
            if k == 0 || k == e.len() {
                return Ok(None);
            }
            idx.push((k - 1) as u32);
        }
        for &v in &x[self.edges.len()..] {
            if v == T::zero() {
                idx.push(0);
            } else if v == T::one() {
                idx.push(1);
            } else {
                return Ok(None);
            }
        }
        Ok(Some(StratumId(idx)))
    }
}

impl<T: Real> Serialize for CoarseningScheme<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.spec.serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for CoarseningScheme<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let spec = SchemeSpec::<T>::deserialize(d)?;
        Self::from_spec(spec).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnmatchedReason {
    OutsideRegion,
    NoCrossArmPartner,
}

/// Where matching put a subject.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Placement {
    Matched { arm: Arm, cell: usize },
    Unmatched {
        stratum: Option<StratumId>,
        reason: UnmatchedReason,
    },
}

/// A cell holding both arms, with member positions in the cohort.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchedCell {
    pub stratum: StratumId,
    pub treated: Vec<usize>,
    pub controls: Vec<usize>,
}

/// Output of coarsened exact matching: `G¹`, `G⁰`, the unmatched set, and the
/// matched cells.
#[derive(Debug, Clone)]
pub struct MatchedCohort<T> {
    cohort: Cohort<T>,
    scheme: CoarseningScheme<T>,
    placements: Vec<Placement>,
    cells: Vec<MatchedCell>,
    g1: Vec<usize>,
    g0: Vec<usize>,
}

/// Counts summarising a matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchSummary {
    pub n1: usize,
    pub n0: usize,
    pub unmatched_count: usize,
    pub outside_region: usize,
    pub no_partner: usize,
    pub matched_cells: usize,
    pub omega_n: bool,
}

/// Runs coarsened exact matching.
pub fn match_cohort<T: Real>(cohort: &Cohort<T>, scheme: &CoarseningScheme<T>) -> Result<MatchedCohort<T>> {
    if cohort.is_empty() {
        return Err(Error::invalid("cannot match an empty cohort"));
    }
    let strata: Vec<Option<StratumId>> = cohort
        .subjects()
        .iter()
        .map(|s| scheme.assign(&s.covariates))
        .collect::<Result<_>>()?;

    let mut groups: HashMap<&StratumId, [Vec<usize>; 2]> = HashMap::new();
    for (k, st) in strata.iter().enumerate() {
        if let Some(st) = st {
            groups.entry(st).or_default()[cohort.subjects()[k].arm.slot()].push(k);
        }
    }
    let mut keys: Vec<&StratumId> = groups
        .iter()
        .filter(|(_, g)| !g[0].is_empty() && !g[1].is_empty())
        .map(|(k, _)| *k)
        .collect();
    keys.sort();

    let mut placements: Vec<Option<Placement>> = vec![None; cohort.len()];
    let mut cells = Vec::with_capacity(keys.len());
    for (c, key) in keys.iter().enumerate() {
        let [controls, treated] = groups[*key].clone();
        for &k in &treated {
            placements[k] = Some(Placement::Matched { arm: Arm::Treated, cell: c });
        }
        for &k in &controls {
            placements[k] = Some(Placement::Matched { arm: Arm::Control, cell: c });
        }
        cells.push(MatchedCell {
            stratum: (*key).clone(),
            treated,
            controls,
        });
    }
    let placements: Vec<Placement> = placements
        .into_iter()
        .zip(strata)
        .map(|(p, st)| match p {
            Some(p) => p,
            None => match st {
                None => Placement::Unmatched {
                    stratum: None,
                    reason: UnmatchedReason::OutsideRegion,
                },
                Some(st) => Placement::Unmatched {
                    stratum: Some(st),
                    reason: UnmatchedReason::NoCrossArmPartner,
                },
            },
        })
        .collect();

    let mut g1 = Vec::new();
    let mut g0 = Vec::new();
    for (k, p) in placements.iter().enumerate() {
        match p {
            Placement::Matched { arm: Arm::Treated, .. } => g1.push(k),
            Placement::Matched { arm: Arm::Control, .. } => g0.push(k),
            Placement::Unmatched { .. } => {}
        }
    }
    Ok(MatchedCohort {
        cohort: cohort.clone(),
        scheme: scheme.clone(),
        placements,
        cells,
        g1,
        g0,
    })
}

impl<T: Real> MatchedCohort<T> {
    pub fn cohort(&self) -> &Cohort<T> {
        &self.cohort
    }

    pub fn scheme(&self) -> &CoarseningScheme<T> {
        &self.scheme
    }

    pub fn placements(&self) -> &[Placement] {
        &self.placements
    }

    pub fn placement(&self, id: &str) -> Option<&Placement> {
        self.cohort.index_of(id).map(|k| &self.placements[k])
    }

    /// Stratum of a subject, when its covariates fall inside `𝒳`.
    pub fn stratum_of(&self, id: &str) -> Option<&StratumId> {
        match self.placement(id)? {
            Placement::Matched { cell, .. } => Some(&self.cells[*cell].stratum),
            Placement::Unmatched { stratum, .. } => stratum.as_ref(),
        }
    }

    pub fn cells(&self) -> &[MatchedCell] {
        &self.cells
    }

    /// Positions of `G¹`.
    pub fn g1(&self) -> &[usize] {
        &self.g1
    }

    /// Positions of `G⁰`.
    pub fn g0(&self) -> &[usize] {
        &self.g0
    }

    pub fn group(&self, arm: Arm) -> &[usize] {
        match arm {
            Arm::Treated => &self.g1,
            Arm::Control => &self.g0,
        }
    }

    pub fn n1(&self) -> usize {
        self.g1.len()
    }

    pub fn n0(&self) -> usize {
        self.g0.len()
    }

    pub fn unmatched_count(&self) -> usize {
        self.cohort.len() - self.g1.len() - self.g0.len()
    }

    /// Arm-wise `(treated, control)` at-risk counts in a matched cell at `t`.
    pub fn cell_at_risk(&self, cell: usize, t: T) -> (usize, usize) {
        let subjects = self.cohort.subjects();
        let c = &self.cells[cell];
        let y1 = c.treated.iter().filter(|&&k| subjects[k].at_risk(t)).count();
        let y0 = c.controls.iter().filter(|&&k| subjects[k].at_risk(t)).count();
        (y1, y0)
    }

    /// `w^i_t` for the subject at cohort position `k`.
    pub fn weight_at(&self, k: usize, t: T) -> T {
        match self.placements[k] {
            Placement::Matched { arm: Arm::Treated, .. } => T::one(),
            Placement::Matched { arm: Arm::Control, cell } => {
                let (y1, y0) = self.cell_at_risk(cell, t);
                pinv(T::of_count(y0)) * T::of_count(y1)
            }
            Placement::Unmatched { .. } => T::zero(),
        }
    }

    /// `w^i_t` by subject id.
    pub fn cem_weight(&self, id: &str, t: T) -> Result<T> {
        let k = self
            .cohort
            .index_of(id)
            .ok_or_else(|| Error::invalid(format!("unknown subject id {id}")))?;
        Ok(self.weight_at(k, t))
    }

    /// `𝒴̄^z_t = Σ_{i∈G^z} w^i_t Y^i_t`, evaluated from the definition.
    pub fn pooled_at_risk(&self, arm: Arm, t: T) -> T {
        let subjects = self.cohort.subjects();
        self.group(arm)
            .iter()
            .filter(|&&k| subjects[k].at_risk(t))
            .map(|&k| self.weight_at(k, t))
            .fold(T::zero(), |a, b| a + b)
    }

    /// `Ω^n`: every treated matched subject's cell keeps a control at risk at `τ`.
    /// Vacuously true when `G¹` is empty.
    pub fn omega_n_holds(&self) -> bool {
        let tau = self.cohort.horizon();
        let subjects = self.cohort.subjects();
        self.cells
            .iter()
            .all(|c| c.controls.iter().any(|&k| subjects[k].at_risk(tau)))
    }

    pub fn summary(&self) -> MatchSummary {
        let outside = self
            .placements
            .iter()
            .filter(|p| {
                matches!(
                    p,
                    Placement::Unmatched {
                        reason: UnmatchedReason::OutsideRegion,
                        ..
                    }
                )
            })
            .count();
        MatchSummary {
            n1: self.n1(),
            n0: self.n0(),
            unmatched_count: self.unmatched_count(),
            outside_region: outside,
            no_partner: self.unmatched_count() - outside,
            matched_cells: self.cells.len(),
            omega_n: self.omega_n_holds(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::SubjectRecord;
    use proptest::prelude::*;

    fn subj(id: &str, x: Vec<f64>, arm: Arm, time: f64, event: bool) -> SubjectRecord<f64> {
        SubjectRecord::new(id, x, arm, time, event).unwrap()
    }

    fn unit_scheme(bins: usize) -> CoarseningScheme<f64> {
        CoarseningScheme::grid(&[0.0], &[1.0], bins, 0).unwrap()
    }

    #[test]
    fn simulation_grid_cell_count() {
        let bins = (5000f64).powf(0.3).floor() as usize;
        assert_eq!(bins, 12);
        let s = CoarseningScheme::grid(&[-5.0; 3], &[5.0; 3], bins, 2).unwrap();
        assert_eq!(s.cell_count(), 12u64.pow(3) * 4);
        assert_eq!(s.dim(), 5);
    }

    #[test]
    fn single_cell_and_diameter() {
        let s = unit_scheme(1);
        assert_eq!(s.cell_count(), 1);
        assert_eq!(s.assign(&[0.7]).unwrap(), Some(StratumId(vec![0])));
        let s = CoarseningScheme::grid(&[0.0, 0.0], &[2.0, 4.0], 2, 0).unwrap();
        assert!((s.max_diameter() - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn invalid_schemes() {
        assert!(CoarseningScheme::<f64>::grid(&[0.0], &[1.0], 0, 0).is_err());
        assert!(CoarseningScheme::<f64>::grid(&[1.0], &[1.0], 2, 0).is_err());
        assert!(CoarseningScheme::<f64>::grid(&[0.0, 0.0], &[1.0], 2, 0).is_err());
        assert!(CoarseningScheme::<f64>::from_edges(vec![vec![0.0]], 0).is_err());
        assert!(CoarseningScheme::<f64>::from_edges(vec![vec![0.0, 0.0, 1.0]], 0).is_err());
    }

    #[test]
    fn half_open_cells() {
        let s = unit_scheme(2);
        assert_eq!(s.assign(&[0.5]).unwrap(), Some(StratumId(vec![0])));
        assert_eq!(s.assign(&[0.51]).unwrap(), Some(StratumId(vec![1])));
        assert_eq!(s.assign(&[1.0]).unwrap(), Some(StratumId(vec![1])));
        assert_eq!(s.assign(&[0.0]).unwrap(), None);
        assert_eq!(s.assign(&[1.01]).unwrap(), None);
        assert_eq!(s.assign(&[f64::NAN]).unwrap(), None);
        assert!(s.assign(&[0.5, 0.5]).is_err());

        let sim = CoarseningScheme::grid(&[-5.0; 3], &[5.0; 3], 12, 2).unwrap();
        assert_eq!(sim.assign(&[-5.0, 0.0, 0.0, 0.0, 1.0]).unwrap(), None);
        assert_eq!(sim.assign(&[0.0, 0.0, 0.0, 0.0, 0.5]).unwrap(), None);
        assert_eq!(
            sim.assign(&[0.0, 0.1, 5.0, 1.0, 0.0]).unwrap(),
            Some(StratumId(vec![5, 6, 11, 1, 0]))
        );
    }

    #[test]
    fn scheme_json_forms() {
        let s: CoarseningScheme<f64> =
            serde_json::from_str(r#"{"box_lo":[0],"box_hi":[1],"bins_per_dim":2,"binary_dims":1}"#).unwrap();
        assert_eq!(s.dim(), 2);
        let text = serde_json::to_string(&s).unwrap();
        let back: CoarseningScheme<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        let e: CoarseningScheme<f64> =
            serde_json::from_str(r#"{"edges":[[0,0.25,1]],"binary_dims":0}"#).unwrap();
        assert_eq!(e.assign(&[0.3]).unwrap(), Some(StratumId(vec![1])));
        assert!(serde_json::from_str::<CoarseningScheme<f64>>(r#"{"edges":[[1,0]],"binary_dims":0}"#).is_err());
    }

    #[test]
    fn matching_examples() {
        let one = Cohort::new(
            vec![
                subj("t", vec![0.3], Arm::Treated, 1.0, true),
                subj("c", vec![0.4], Arm::Control, 1.0, true),
            ],
            5.0,
        )
        .unwrap();
        let scheme = CoarseningScheme::from_edges(vec![vec![0.0, 0.5, 1.0]], 0).unwrap();
        let mc = match_cohort(&one, &scheme).unwrap();
        assert_eq!(mc.n1(), 1);
        assert_eq!(mc.n0(), 1);

        let split = Cohort::new(
            vec![
                subj("t", vec![0.3], Arm::Treated, 1.0, true),
                subj("c", vec![0.7], Arm::Control, 1.0, true),
            ],
            5.0,
        )
        .unwrap();
        let mc = match_cohort(&split, &scheme).unwrap();
        assert_eq!(mc.n1(), 0);
        assert_eq!(mc.n0(), 0);
        assert_eq!(
            mc.placement("t"),
            Some(&Placement::Unmatched {
                stratum: Some(StratumId(vec![0])),
                reason: UnmatchedReason::NoCrossArmPartner
            })
        );
        assert!(mc.omega_n_holds());

        let mixed = Cohort::new(
            vec![
                subj("t1", vec![0.1], Arm::Treated, 1.0, true),
                subj("t2", vec![0.2], Arm::Treated, 1.0, true),
                subj("c1", vec![0.3], Arm::Control, 1.0, true),
                subj("c2", vec![0.4], Arm::Control, 1.0, true),
                subj("c3", vec![0.45], Arm::Control, 1.0, true),
                subj("t3", vec![0.9], Arm::Treated, 1.0, true),
                subj("out", vec![2.0], Arm::Control, 1.0, true),
            ],
            5.0,
        )
        .unwrap();
        let mc = match_cohort(&mixed, &scheme).unwrap();
        assert_eq!(mc.n1(), 2);
        assert_eq!(mc.n0(), 3);
        assert_eq!(mc.unmatched_count(), 2);
        let sum = mc.summary();
        assert_eq!(sum.outside_region, 1);
        assert_eq!(sum.no_partner, 1);
        assert_eq!(mc.stratum_of("out"), None);
    }

    fn one_cell(treated: &[f64], controls: &[f64], tau: f64) -> MatchedCohort<f64> {
        let mut subjects = Vec::new();
        for (k, &t) in treated.iter().enumerate() {
            subjects.push(subj(&format!("t{k}"), vec![0.5], Arm::Treated, t, true));
        }
        for (k, &t) in controls.iter().enumerate() {
            subjects.push(subj(&format!("c{k}"), vec![0.5], Arm::Control, t, true));
        }
        let cohort = Cohort::new(subjects, tau).unwrap();
        match_cohort(&cohort, &unit_scheme(1)).unwrap()
    }

    #[test]
    fn weights() {
        let mc = one_cell(&[3.0], &[3.0, 4.0], 5.0);
        assert_eq!(mc.cem_weight("t0", 4.5).unwrap(), 1.0);
        assert_eq!(mc.cem_weight("c0", 2.0).unwrap(), 0.5);
        // treated out of risk, one control left
        assert_eq!(mc.cem_weight("c1", 3.5).unwrap(), 0.0);
        // all controls out of risk
        assert_eq!(mc.cem_weight("c0", 4.5).unwrap(), 0.0);
        assert!(mc.cem_weight("nobody", 1.0).is_err());

        let split = Cohort::new(
            vec![
                subj("t", vec![0.3], Arm::Treated, 1.0, true),
                subj("c", vec![0.7], Arm::Control, 1.0, true),
            ],
            5.0,
        )
        .unwrap();
        let mc = match_cohort(&split, &unit_scheme(2)).unwrap();
        assert_eq!(mc.cem_weight("t", 0.5).unwrap(), 0.0);
        assert_eq!(mc.pooled_at_risk(Arm::Treated, 0.0), 0.0);
        assert_eq!(mc.pooled_at_risk(Arm::Control, 0.0), 0.0);
    }

    #[test]
    fn pooled_at_risk_examples() {
        let mc = one_cell(&[1.0, 2.0, 3.0], &[1.0, 1.5, 2.5, 3.5, 4.0], 5.0);
        assert_eq!(mc.pooled_at_risk(Arm::Treated, 0.0), 3.0);
        assert!((mc.pooled_at_risk(Arm::Control, 0.0) - 3.0).abs() < 1e-14);
        let balanced = one_cell(&[2.0, 3.0, 4.0], &[2.0, 3.0, 4.0], 5.0);
        assert_eq!(balanced.pooled_at_risk(Arm::Control, 1.0), 3.0);
        for k in balanced.g0() {
            assert_eq!(balanced.weight_at(*k, 1.0), 1.0);
        }
    }

    #[test]
    fn omega_n_examples() {
        assert!(one_cell(&[1.0], &[6.0], 5.0).omega_n_holds());
        assert!(!one_cell(&[1.0], &[4.0, 4.9], 5.0).omega_n_holds());
        assert!(one_cell(&[1.0], &[5.0], 5.0).omega_n_holds());
    }

    fn arb_cohort() -> impl Strategy<Value = Cohort<f64>> {
        proptest::collection::vec((0.0f64..1.0, any::<bool>(), 0u8..10, any::<bool>()), 2..40).prop_map(|raw| {
            let subjects = raw
                .into_iter()
                .enumerate()
                .map(|(k, (x, z, t, e))| {
                    subj(&format!("s{k}"), vec![x], if z { Arm::Treated } else { Arm::Control }, f64::from(t), e)
                })
                .collect();
            Cohort::new(subjects, 6.0).unwrap()
        })
    }

    proptest! {
        #[test]
        fn match_is_idempotent_and_permutation_invariant(c in arb_cohort(), bins in 1usize..5) {
            let scheme = unit_scheme(bins);
            let a = match_cohort(&c, &scheme).unwrap();
            let b = match_cohort(&c, &scheme).unwrap();
            prop_assert_eq!(a.placements(), b.placements());
            let mut rev: Vec<_> = c.subjects().to_vec();
            rev.reverse();
            let r = match_cohort(&Cohort::new(rev, c.horizon()).unwrap(), &scheme).unwrap();
            for s in c.subjects() {
                let pa = a.placement(&s.id).map(|p| matches!(p, Placement::Matched { .. }));
                let pr = r.placement(&s.id).map(|p| matches!(p, Placement::Matched { .. }));
                prop_assert_eq!(pa, pr);
                prop_assert_eq!(a.stratum_of(&s.id), r.stratum_of(&s.id));
                for t in [0.0, 1.0, 3.0, 5.5] {
                    prop_assert_eq!(a.cem_weight(&s.id, t).unwrap(), r.cem_weight(&s.id, t).unwrap());
                }
            }
            prop_assert_eq!(a.n1() + a.n0() + a.unmatched_count(), c.len());
        }

        #[test]
        fn membership_invariant(c in arb_cohort(), bins in 1usize..5) {
            let scheme = unit_scheme(bins);
            let mc = match_cohort(&c, &scheme).unwrap();
            for (k, s) in c.subjects().iter().enumerate() {
                let cell = scheme.assign(&s.covariates).unwrap();
                let partner = cell.as_ref().is_some_and(|cell| {
                    c.subjects().iter().any(|o| o.arm != s.arm && scheme.assign(&o.covariates).unwrap().as_ref() == Some(cell))
                });
                let in_group = mc.group(s.arm).contains(&k);
                prop_assert_eq!(partner, in_group);
                prop_assert!(!mc.group(s.arm.other()).contains(&k));
            }
        }

        #[test]
        fn control_weight_over_full_arm_matches_matched_arm(c in arb_cohort(), bins in 1usize..5, t in 0.0f64..6.0) {
            let scheme = unit_scheme(bins);
            let mc = match_cohort(&c, &scheme).unwrap();
            for &k in mc.g0() {
                let cell = scheme.assign(&c.subjects()[k].covariates).unwrap();
                let in_cell = |arm: Arm| c.subjects().iter()
                    .filter(|o| o.arm == arm && o.at_risk(t) && scheme.assign(&o.covariates).unwrap() == cell)
                    .count() as f64;
                let full = pinv(in_cell(Arm::Control)) * in_cell(Arm::Treated);
                prop_assert_eq!(full, mc.weight_at(k, t));
            }
        }

        #[test]
        fn omega_n_implies_equal_pooled_risk(c in arb_cohort(), bins in 1usize..4) {
            let mc = match_cohort(&c, &unit_scheme(bins)).unwrap();
            if mc.omega_n_holds() {
                let mut prev = [f64::INFINITY; 2];
                for t in [0.0, 0.5, 1.0, 2.0, 2.5, 4.0, 6.0] {
                    let y1 = mc.pooled_at_risk(Arm::Treated, t);
                    let y0 = mc.pooled_at_risk(Arm::Control, t);
                    prop_assert!((y1 - y0).abs() <= 1e-12);
                    prop_assert!(y1 <= prev[1] + 1e-12 && y0 <= prev[0] + 1e-12);
                    prev = [y0, y1];
                }
            }
        }
    }
}
