//! Failure injection: which workers are faulty in an iteration, and what
//! they send.
//!
//! Label flipping poisons a faulty worker's data before it computes an
//! otherwise honest gradient. Bit flipping and the arbitrary-scaling attack
//! rewrite gradients after they are computed.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregation::GradientSet;
use crate::error::{invalid, Error, Result};
use crate::rng::Rng;
use crate::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    None,
    LabelFlip,
    BitFlip,
    Arbitrary,
}

impl FaultKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::None => "none",
            FaultKind::LabelFlip => "label_flip",
            FaultKind::BitFlip => "bit_flip",
            FaultKind::Arbitrary => "arbitrary",
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FaultKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FaultKind::None),
            "label_flip" => Ok(FaultKind::LabelFlip),
            "bit_flip" => Ok(FaultKind::BitFlip),
            "arbitrary" => Ok(FaultKind::Arbitrary),
            other => Err(invalid("fault.kind", format!("unknown fault kind `{other}`"))),
        }
    }
}

/// How the faulty index set evolves over iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// `{0, …, q−1}` every iteration.
    #[default]
    Fixed,
    /// `{(t·q + i) mod m : i < q}`.
    Rotating,
    /// A uniform `q`-subset drawn from the fault stream.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    /// Number of faulty workers; ignored when `kind` is `None`.
    pub q: usize,
    pub selection: Selection,
    /// Scale applied to the correct mean by the arbitrary attack.
    pub magnitude: f64,
}

impl FaultSpec {
    pub fn none() -> Self {
        Self {
            kind: FaultKind::None,
            q: 0,
            selection: Selection::Fixed,
            magnitude: -10.0,
        }
    }

    pub fn new(kind: FaultKind, q: usize) -> Self {
        Self {
            kind,
            q,
            ..Self::none()
        }
    }

    pub fn with_selection(mut self, selection: Selection) -> Self {
        self.selection = selection;
        self
    }

    pub fn with_magnitude(mut self, magnitude: f64) -> Self {
        self.magnitude = magnitude;
        self
    }

    /// `q` as seen by the simulator: zero when no faults are injected.
    pub fn effective_q(&self) -> usize {
        if self.kind == FaultKind::None {
            0
        } else {
            self.q
        }
    }
}

impl Default for FaultSpec {
    fn default() -> Self {
        Self::none()
    }
}

/// Faulty worker indices for iteration `t`.
pub fn select_faulty(
    m: usize,
    q: usize,
    selection: Selection,
    t: usize,
    rng: &mut Rng,
) -> Result<BTreeSet<usize>> {
    if q > m {
        return Err(Error::TooManyFaulty { q, m });
    }
    if q == 0 {
        return Ok(BTreeSet::new());
    }
    Ok(match selection {
        Selection::Fixed => (0..q).collect(),
        Selection::Rotating => {
            let start = (t % m) * q % m;
            (0..q).map(|i| (start + i) % m).collect()
        }
        Selection::Random => rng.subset(m, q).into_iter().collect(),
    })
}

fn check_indices(g: &GradientSet, faulty: &BTreeSet<usize>) -> Result<()> {
    match faulty.iter().next_back() {
        Some(&i) if i >= g.len() => Err(Error::FaultIndex { index: i, m: g.len() }),
        _ => Ok(()),
    }
}

/// Every faulty candidate becomes the negation of the lowest-indexed faulty
/// candidate's original value.
pub fn apply_bit_flip(g: &GradientSet, faulty: &BTreeSet<usize>) -> Result<GradientSet> {
    check_indices(g, faulty)?;
    let mut out = g.clone();
    if let Some(&source) = faulty.iter().next() {
        let flipped = g.candidates[source].neg();
        for &i in faulty {
            out.candidates[i] = flipped.clone();
        }
    }
    out.truth = Some(faulty.clone());
    Ok(out)
}

/// Label flip `ℓ → C − 1 − ℓ`.
pub fn flip_label(label: usize, num_classes: usize) -> Result<usize> {
    if label >= num_classes {
        return Err(Error::LabelOutOfRange {
            label,
            classes: num_classes,
        });
    }
    Ok(num_classes - 1 - label)
}

/// Every faulty candidate becomes `magnitude ×` the mean of the correct
/// candidates. With no correct candidate left, each faulty one becomes
/// `magnitude ×` a random unit vector.
pub fn apply_arbitrary(
    g: &GradientSet,
    faulty: &BTreeSet<usize>,
    magnitude: f64,
    rng: &mut Rng,
) -> Result<GradientSet> {
    check_indices(g, faulty)?;
    let d = g.dim()?;
    let mut out = g.clone();
    out.truth = Some(faulty.clone());
    if faulty.is_empty() {
        return Ok(out);
    }
    let correct: Vec<usize> = (0..g.len()).filter(|i| !faulty.contains(i)).collect();
    if correct.is_empty() {
        for &i in faulty {
            out.candidates[i] = random_unit(d, rng).scaled(magnitude);
        }
        return Ok(out);
    }
    let mut mean = ParamVector::zeros(d);
    for &i in &correct {
        mean.add_assign(&g.candidates[i]);
    }
    let n = correct.len() as f64;
    let replacement: ParamVector = mean.iter().map(|v| v / n * magnitude).collect::<Vec<_>>().into();
    for &i in faulty {
        out.candidates[i] = replacement.clone();
    }
    Ok(out)
}

fn random_unit(d: usize, rng: &mut Rng) -> ParamVector {
    loop {
        let v: ParamVector = (0..d).map(|_| rng.normal()).collect::<Vec<_>>().into();
        let norm = v.norm();
        if norm > 1e-12 {
            return v.scaled(1.0 / norm);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> Rng {
        Rng::new(1, 4)
    }

    fn set(rows: &[&[f64]]) -> GradientSet {
        GradientSet::new(rows.iter().map(|r| ParamVector::new(r.to_vec())).collect()).unwrap()
    }

    #[test]
    fn fixed_and_rotating_selection() {
        for t in [0, 1, 17] {
            let s = select_faulty(20, 8, Selection::Fixed, t, &mut rng()).unwrap();
            assert_eq!(s, (0..8).collect());
        }
        let s = select_faulty(4, 2, Selection::Rotating, 1, &mut rng()).unwrap();
        assert_eq!(s, [2, 3].into_iter().collect());
        for sel in [Selection::Fixed, Selection::Rotating, Selection::Random] {
            assert!(select_faulty(5, 0, sel, 3, &mut rng()).unwrap().is_empty());
        }
        assert_eq!(
            select_faulty(3, 4, Selection::Fixed, 0, &mut rng()),
            Err(Error::TooManyFaulty { q: 4, m: 3 })
        );
    }

    #[test]
    fn random_selection_is_reproducible() {
        let a = select_faulty(10, 4, Selection::Random, 0, &mut Rng::new(3, 4)).unwrap();
        let b = select_faulty(10, 4, Selection::Random, 0, &mut Rng::new(3, 4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn bit_flip_examples() {
        let g = set(&[&[5.0, 5.0], &[2.0, -1.0], &[7.0, 8.0]]);
        let out = apply_bit_flip(&g, &[1, 2].into_iter().collect()).unwrap();
        assert_eq!(out.candidates[0], g.candidates[0]);
        assert_eq!(out.candidates[1].as_slice(), &[-2.0, 1.0]);
        assert_eq!(out.candidates[2].as_slice(), &[-2.0, 1.0]);
        assert_eq!(out.truth, Some([1, 2].into_iter().collect()));

        let same = apply_bit_flip(&g, &BTreeSet::new()).unwrap();
        assert_eq!(same.candidates, g.candidates);

        let one = set(&[&[3.0]]);
        let out = apply_bit_flip(&one, &[0].into_iter().collect()).unwrap();
        assert_eq!(out.candidates[0].as_slice(), &[-3.0]);

        assert!(matches!(
            apply_bit_flip(&one, &[1].into_iter().collect()),
            Err(Error::FaultIndex { .. })
        ));
    }

    #[test]
    fn label_flip_examples() {
        assert_eq!(flip_label(3, 10).unwrap(), 6);
        assert_eq!(flip_label(9, 10).unwrap(), 0);
        assert_eq!(flip_label(0, 2).unwrap(), 1);
        assert!(flip_label(10, 10).is_err());
    }

    #[test]
    fn arbitrary_examples() {
        let g = set(&[&[1.0], &[1.0], &[4.0]]);
        let faulty: BTreeSet<usize> = [2].into_iter().collect();
        let out = apply_arbitrary(&g, &faulty, -10.0, &mut rng()).unwrap();
        assert_eq!(out.candidates[2].as_slice(), &[-10.0]);

        let g = set(&[&[1.0, 2.0], &[3.0, 4.0], &[0.0, 0.0]]);
        let stealth = apply_arbitrary(&g, &faulty, 1.0, &mut rng()).unwrap();
        assert_eq!(stealth.candidates[2].as_slice(), &[2.0, 3.0]);
        let zero = apply_arbitrary(&g, &faulty, 0.0, &mut rng()).unwrap();
        assert_eq!(zero.candidates[2].as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn arbitrary_fallback_uses_random_direction() {
        let g = set(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let all: BTreeSet<usize> = [0, 1].into_iter().collect();
        let out = apply_arbitrary(&g, &all, 3.0, &mut rng()).unwrap();
        for c in &out.candidates {
            assert!((c.norm() - 3.0).abs() < 1e-12);
        }
    }
}
