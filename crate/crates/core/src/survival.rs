//! Subject records, counting-process evaluation and the event-time grid.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Treatment arm `Z ∈ {0, 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub fn from_indicator(z: u8) -> Option<Self> {
        match z {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treated),
            _ => None,
        }
    }

    pub fn indicator(self) -> u8 {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    /// Position of the arm in `[control, treated]` arrays.
    #[inline]
    pub fn slot(self) -> usize {
        self.indicator() as usize
    }

    pub fn other(self) -> Self {
        match self {
            Arm::Control => Arm::Treated,
            Arm::Treated => Arm::Control,
        }
    }
}

impl Serialize for Arm {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.indicator())
    }
}

impl<'de> Deserialize<'de> for Arm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let z = u8::deserialize(d)?;
        Arm::from_indicator(z)
            .ok_or_else(|| serde::de::Error::custom(format!("arm must be 0 or 1, got {z}")))
    }
}

/// One individual's `(X, Z, T̃, δ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord<T> {
    pub id: String,
    pub covariates: Vec<T>,
    pub arm: Arm,
    pub observed_time: T,
    pub event: bool,
}

impl<T: Real> SubjectRecord<T> {
    pub fn new(
        id: impl Into<String>,
        covariates: Vec<T>,
        arm: Arm,
        observed_time: T,
        event: bool,
    ) -> Result<Self> {
        let id = id.into();
        if !observed_time.is_finite() || observed_time < T::zero() {
            return Err(Error::invalid(format!(
                "subject {id}: observed time must be finite and >= 0, got {observed_time}"
            )));
        }
        Ok(Self {
            id,
            covariates,
            arm,
            observed_time,
            event,
        })
    }

    /// `Y_t = 1{T̃ ≥ t}`; left-continuous, so a subject failing at `t` is still at risk at `t`.
    #[inline]
    pub fn at_risk(&self, t: T) -> bool {
        self.observed_time >= t
    }

    /// `N_t = 1{T̃ ≤ t, δ = 1}`.
    #[inline]
    pub fn counting(&self, t: T) -> bool {
        self.event && self.observed_time <= t
    }

    /// Checks that every coordinate past `continuous_dims` is 0 or 1.
    pub fn check_binary_block(&self, continuous_dims: usize) -> Result<()> {
        for (j, &x) in self.covariates.iter().enumerate().skip(continuous_dims) {
            if x != T::zero() && x != T::one() {
                return Err(Error::invalid(format!(
                    "subject {}: binary covariate x{} must be 0 or 1, got {x}",
                    self.id,
                    j + 1
                )));
            }
        }
        Ok(())
    }
}

/// The collection of individuals together with the horizon `τ`.
#[derive(Debug, Clone)]
pub struct Cohort<T> {
    subjects: Vec<SubjectRecord<T>>,
    horizon: T,
    index: HashMap<String, usize>,
}

impl<T: Real> Cohort<T> {
    pub fn new(subjects: Vec<SubjectRecord<T>>, horizon: T) -> Result<Self> {
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(Error::invalid(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        let dim = subjects.first().map(|s| s.covariates.len()).unwrap_or(0);
        let mut index = HashMap::with_capacity(subjects.len());
        for (k, s) in subjects.iter().enumerate() {
            if s.covariates.len() != dim {
                return Err(Error::invalid(format!(
                    "subject {}: expected {dim} covariates, got {}",
                    s.id,
                    s.covariates.len()
                )));
            }
            if index.insert(s.id.clone(), k).is_some() {
                return Err(Error::invalid(format!("duplicate subject id {}", s.id)));
            }
        }
        Ok(Self {
            subjects,
            horizon,
            index,
        })
    }

    pub fn subjects(&self) -> &[SubjectRecord<T>] {
        &self.subjects
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Covariate dimension `d`.
    pub fn dim(&self) -> usize {
        self.subjects.first().map(|s| s.covariates.len()).unwrap_or(0)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&SubjectRecord<T>> {
        self.index_of(id).map(|k| &self.subjects[k])
    }

    /// `#𝔾^z`.
    pub fn arm_count(&self, arm: Arm) -> usize {
        self.subjects.iter().filter(|s| s.arm == arm).count()
    }

    /// Same subjects with arm labels swapped.
    pub fn with_arms_swapped(&self) -> Self {
        let subjects = self
            .subjects
            .iter()
            .map(|s| SubjectRecord {
                arm: s.arm.other(),
                ..s.clone()
            })
            .collect();
        Self {
            subjects,
            horizon: self.horizon,
            index: self.index.clone(),
        }
    }
}

/// A single event on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridEvent {
    /// Position of the subject in its cohort.
    pub subject: usize,
    pub arm: Arm,
}

/// Distinct observed event times in `(0, τ]` with the events at each time.
///
/// Times are compared by exact equality; ties are grouped in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct EventGrid<T> {
    times: Vec<T>,
    events: Vec<Vec<GridEvent>>,
}

impl<T: Real> EventGrid<T> {
    pub fn build(cohort: &Cohort<T>) -> Self {
        Self::build_filtered(cohort, |_| true)
    }

    /// Grid restricted to subjects accepted by `keep`.
    pub fn build_filtered(cohort: &Cohort<T>, keep: impl Fn(usize) -> bool) -> Self {
        let tau = cohort.horizon();
        let mut evs: Vec<(T, usize)> = cohort
            .subjects()
            .iter()
            .enumerate()
            .filter(|(k, s)| s.event && s.observed_time <= tau && keep(*k))
            .map(|(k, s)| (s.observed_time, k))
            .collect();
        evs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

        let mut times: Vec<T> = Vec::new();
        let mut events: Vec<Vec<GridEvent>> = Vec::new();
        for (t, k) in evs {
            let ev = GridEvent {
                subject: k,
                arm: cohort.subjects()[k].arm,
            };
            match times.last() {
                Some(&last) if last == t => events.last_mut().unwrap().push(ev),
                _ => {
                    times.push(t);
                    events.push(vec![ev]);
                }
            }
        }
        Self { times, events }
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn events_at(&self, k: usize) -> &[GridEvent] {
        &self.events[k]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn multiplicity(&self, k: usize) -> usize {
        self.events[k].len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (T, &[GridEvent])> {
        self.times
            .iter()
            .copied()
            .zip(self.events.iter().map(|v| v.as_slice()))
    }
}

/// Reads the `id,x1,...,xd,z,time,event` CSV schema.
///
/// `continuous_dims` is the length of the continuous covariate block; the
/// remaining covariates must be 0/1. When `horizon` is `None` the largest
/// observed time is used.
pub fn read_cohort_csv<T: Real, R: Read>(
    reader: R,
    continuous_dims: usize,
    horizon: Option<T>,
) -> Result<Cohort<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let ncol = cols.len();
    if ncol < 4
        || cols[0] != "id"
        || cols[ncol - 3] != "z"
        || cols[ncol - 2] != "time"
        || cols[ncol - 1] != "event"
    {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must be id,x1,...,xd,z,time,event; got {}", cols.join(",")),
        });
    }
    let dim = ncol - 4;
    if continuous_dims > dim {
        return Err(Error::Config(format!(
            "{continuous_dims} continuous dimensions declared but the file has {dim} covariates"
        )));
    }

    let mut subjects = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| Error::Parse { line, message };
        if rec.len() != ncol {
            return Err(bad(format!("expected {ncol} fields, got {}", rec.len())));
        }
        let id = rec[0].to_string();
        let mut covariates = Vec::with_capacity(dim);
        for j in 0..dim {
            let x: T = rec[1 + j]
                .parse()
                .map_err(|_| bad(format!("x{} is not a number: {:?}", j + 1, &rec[1 + j])))?;
            covariates.push(x);
        }
        let arm = match &rec[ncol - 3] {
            "0" => Arm::Control,
            "1" => Arm::Treated,
            other => return Err(bad(format!("z must be 0 or 1, got {other:?}"))),
        };
        let time: T = rec[ncol - 2]
            .parse()
            .map_err(|_| bad(format!("time is not a number: {:?}", &rec[ncol - 2])))?;
        let event = match &rec[ncol - 1] {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("event must be 0 or 1, got {other:?}"))),
        };
        let s = SubjectRecord::new(id, covariates, arm, time, event)
            .map_err(|e| bad(e.to_string()))?;
        s.check_binary_block(continuous_dims)
            .map_err(|e| bad(e.to_string()))?;
        subjects.push(s);
    }
    if subjects.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "dataset has no rows".into(),
        });
    }
    let mut seen = HashSet::new();
    for (k, s) in subjects.iter().enumerate() {
        if !seen.insert(s.id.as_str()) {
            return Err(Error::Parse {
                line: k as u64 + 2,
                message: format!("duplicate id {}", s.id),
            });
        }
    }
    let horizon = match horizon {
        Some(h) => h,
        None => subjects
            .iter()
            .map(|s| s.observed_time)
            .fold(T::zero(), T::max),
    };
    Cohort::new(subjects, horizon)
}

/// Writes a cohort in the same CSV schema read by [`read_cohort_csv`].
pub fn write_cohort_csv<T: Real, W: Write>(cohort: &Cohort<T>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string()];
    header.extend((1..=cohort.dim()).map(|j| format!("x{j}")));
    header.extend(["z", "time", "event"].map(String::from));
    w.write_record(&header)?;
    for s in cohort.subjects() {
        let mut row = Vec::with_capacity(header.len());
        row.push(s.id.clone());
        row.extend(s.covariates.iter().map(|x| x.to_string()));
        row.push(s.arm.indicator().to_string());
        row.push(s.observed_time.to_string());
        row.push(if s.event { "1" } else { "0" }.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, time: f64, event: bool, arm: Arm) -> SubjectRecord<f64> {
        SubjectRecord::new(id, vec![0.0], arm, time, event).unwrap()
    }

    #[test]
    fn at_risk_is_left_continuous() {
        let s = rec("a", 3.0, true, Arm::Treated);
        assert!(s.at_risk(3.0));
        assert!(!s.at_risk(3.0001));
        assert!(s.at_risk(0.0));
        assert!(rec("b", 0.0, false, Arm::Control).at_risk(0.0));
    }

    #[test]
    fn counting_process() {
        let s = rec("a", 3.0, true, Arm::Treated);
        assert!(s.counting(3.0));
        assert!(!s.counting(2.9));
        assert!(!rec("b", 3.0, false, Arm::Treated).counting(10.0));
    }

    #[test]
    fn rejects_bad_records() {
        assert!(SubjectRecord::new("a", vec![], Arm::Control, -1.0, true).is_err());
        assert!(SubjectRecord::new("a", vec![], Arm::Control, f64::NAN, true).is_err());
        assert!(SubjectRecord::new("a", vec![], Arm::Control, f64::INFINITY, true).is_err());
        let s = SubjectRecord::new("a", vec![0.3, 2.0], Arm::Control, 1.0, true).unwrap();
        assert!(s.check_binary_block(1).is_err());
        assert!(s.check_binary_block(2).is_ok());
    }

    #[test]
    fn cohort_invariants() {
        let a = rec("a", 1.0, true, Arm::Treated);
        assert!(Cohort::new(vec![a.clone(), a.clone()], 10.0).is_err());
        assert!(Cohort::new(vec![a.clone()], 0.0).is_err());
        let mut b = rec("b", 1.0, true, Arm::Control);
        b.covariates = vec![0.0, 1.0];
        assert!(Cohort::new(vec![a, b], 10.0).is_err());
    }

    #[test]
    fn grid_groups_ties_and_sorts() {
        let c = Cohort::new(
            vec![
                rec("a", 2.0, true, Arm::Treated),
                rec("b", 5.0, true, Arm::Control),
                rec("c", 2.0, true, Arm::Control),
                rec("d", 7.0, false, Arm::Control),
            ],
            10.0,
        )
        .unwrap();
        let g = EventGrid::build(&c);
        assert_eq!(g.times(), &[2.0, 5.0]);
        assert_eq!(g.multiplicity(0), 2);
        assert_eq!(g.multiplicity(1), 1);
    }

    #[test]
    fn grid_empty_when_all_censored() {
        let c = Cohort::new(
            vec![rec("a", 2.0, false, Arm::Treated), rec("b", 5.0, false, Arm::Control)],
            10.0,
        )
        .unwrap();
        assert!(EventGrid::build(&c).is_empty());
    }

    #[test]
    fn grid_includes_horizon_and_drops_later_events() {
        let c = Cohort::new(
            vec![rec("a", 10.0, true, Arm::Treated), rec("b", 11.0, true, Arm::Control)],
            10.0,
        )
        .unwrap();
        assert_eq!(EventGrid::build(&c).times(), &[10.0]);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let text = "id,x1,x2,z,time,event\na,0.5,1,1,2.5,1\nb,-0.25,0,0,3,0\n";
        let c: Cohort<f64> = read_cohort_csv(text.as_bytes(), 1, Some(10.0)).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get("a").unwrap().arm, Arm::Treated);
        let mut out = Vec::new();
        write_cohort_csv(&c, &mut out).unwrap();
        let back: Cohort<f64> = read_cohort_csv(out.as_slice(), 1, Some(10.0)).unwrap();
        assert_eq!(back.subjects(), c.subjects());

        let bad = "id,x1,z,time,event\na,0.5,1,2.5,1\nb,0.1,2,3,0\n";
        match read_cohort_csv::<f64, _>(bad.as_bytes(), 1, None) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("z must be 0 or 1"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let nonbinary = "id,x1,x2,z,time,event\na,0.5,0.5,1,2.5,1\n";
        assert!(read_cohort_csv::<f64, _>(nonbinary.as_bytes(), 1, None).is_err());
        let c: Cohort<f64> = read_cohort_csv(text.as_bytes(), 1, None).unwrap();
        assert_eq!(c.horizon(), 3.0);
    }

    fn arb_subjects() -> impl Strategy<Value = Vec<(u8, bool, bool)>> {
        proptest::collection::vec((0u8..12, any::<bool>(), any::<bool>()), 1..30)
    }

    proptest! {
        #[test]
        fn counting_and_risk_are_monotone(time in 0.0f64..10.0, event: bool, t1 in 0.0f64..12.0, t2 in 0.0f64..12.0) {
            let s = rec("a", time, event, Arm::Treated);
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(s.counting(lo) <= s.counting(hi));
            prop_assert!(s.at_risk(lo) >= s.at_risk(hi));
            if s.counting(hi) {
                prop_assert!(s.at_risk(s.observed_time));
            }
        }

        #[test]
        fn grid_is_permutation_invariant(raw in arb_subjects(), seed: u64) {
            let subjects: Vec<_> = raw
                .iter()
                .enumerate()
                .map(|(k, &(t, e, z))| rec(&format!("s{k}"), f64::from(t) * 0.5, e, if z { Arm::Treated } else { Arm::Control }))
                .collect();
            let mut shuffled = subjects.clone();
            // deterministic Fisher–Yates with a simple LCG
            let mut state = seed;
            for i in (1..shuffled.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (state >> 33) as usize % (i + 1);
                shuffled.swap(i, j);
            }
            let a = Cohort::new(subjects, 4.0).unwrap();
            let b = Cohort::new(shuffled, 4.0).unwrap();
            let (ga, gb) = (EventGrid::build(&a), EventGrid::build(&b));
            prop_assert_eq!(ga.times(), gb.times());
            for k in 0..ga.len() {
                let mut ia: Vec<_> = ga.events_at(k).iter().map(|e| a.subjects()[e.subject].id.clone()).collect();
                let mut ib: Vec<_> = gb.events_at(k).iter().map(|e| b.subjects()[e.subject].id.clone()).collect();
                ia.sort();
                ib.sort();
                prop_assert_eq!(ia, ib);
            }
        }
    }
}
