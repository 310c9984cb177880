use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_frame, EmissionModel, ModelState, MAX_CONTEXT_ORDER};
use crate::error::{Error, Result};
use crate::math::log_sum_exp;

/// One stored emission row. `-inf` log-probabilities are written as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeEntry {
    pub frame: usize,
    pub context: Vec<i32>,
    #[serde(with = "nullable_logprobs")]
    pub logprobs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LatticeFile {
    num_frames: usize,
    vocab_size: usize,
    context_order: usize,
    entries: Vec<LatticeEntry>,
}

/// Precomputed emission table keyed by (frame, context).
///
/// Keys without a stored row score uniformly unless the model is strict.
#[derive(Clone, Debug)]
pub struct LatticeModel {
    num_frames: usize,
    vocab_size: usize,
    context_order: usize,
    strict: bool,
    entries: Vec<LatticeEntry>,
    index: HashMap<(usize, ModelState), usize>,
}

const NORM_TOL: f64 = 1e-6;

impl LatticeModel {
    pub fn new(
        num_frames: usize,
        vocab_size: usize,
        context_order: usize,
        entries: Vec<LatticeEntry>,
    ) -> Result<Self> {
        if num_frames == 0 || vocab_size == 0 {
            return Err(Error::Validation("lattice needs at least one frame and one token".into()));
        }
        if context_order > MAX_CONTEXT_ORDER {
            return Err(Error::Validation(format!(
                "context order {context_order} exceeds {MAX_CONTEXT_ORDER}"
            )));
        }
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.frame >= num_frames {
                return Err(Error::Validation(format!("entry {i}: frame {} >= {num_frames}", e.frame)));
            }
            if e.context.len() != context_order {
                return Err(Error::Validation(format!(
                    "entry {i}: context length {} != order {context_order}",
                    e.context.len()
                )));
            }
            if e.context.iter().any(|&t| t < -1 || t >= vocab_size as i32) {
                return Err(Error::Validation(format!("entry {i}: context {:?} out of range", e.context)));
            }
            if e.logprobs.len() != vocab_size + 1 {
                return Err(Error::Validation(format!(
                    "entry {i}: {} log-probs, expected {}",
                    e.logprobs.len(),
                    vocab_size + 1
                )));
            }
            if e.logprobs.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::Validation(format!("entry {i}: NaN or +inf log-prob")));
            }
            let norm = log_sum_exp(&e.logprobs);
            if norm.is_nan() || norm.abs() > NORM_TOL {
                return Err(Error::Validation(format!(
                    "entry {i} (frame {}, context {:?}) is not normalized: log-sum-exp = {norm}",
                    e.frame, e.context
                )));
            }
            let key = (e.frame, ModelState::from_window(&e.context)?);
            if index.insert(key, i).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate entry for frame {} context {:?}",
                    e.frame, e.context
                )));
            }
        }
        Ok(Self {
            num_frames,
            vocab_size,
            context_order,
            strict: false,
            entries,
            index,
        })
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn entries(&self) -> &[LatticeEntry] {
        &self.entries
    }

    pub fn from_json(text: &str, source_name: &str) -> Result<Self> {
        let file: LatticeFile = serde_json::from_str(text)
            .map_err(|e| Error::parse(source_name, e.line(), format!("column {}: {e}", e.column())))?;
        Self::new(file.num_frames, file.vocab_size, file.context_order, file.entries)
    }

    pub fn to_json(&self) -> String {
        let file = LatticeFile {
            num_frames: self.num_frames,
            vocab_size: self.vocab_size,
            context_order: self.context_order,
            entries: self.entries.clone(),
        };
        serde_json::to_string_pretty(&file).expect("lattice serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

impl EmissionModel for LatticeModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn context_order(&self) -> usize {
        self.context_order
    }

    fn num_frames(&self) -> usize {
        self.num_frames
    }

    fn log_probs(&self, frame: usize, state: &ModelState, out: &mut [f64]) -> Result<()> {
        check_frame(frame, self.num_frames)?;
        match self.index.get(&(frame, *state)) {
            Some(&i) => out.copy_from_slice(&self.entries[i].logprobs),
            None if self.strict => {
                return Err(Error::Validation(format!(
                    "no emission row for frame {frame}, context {:?}",
                    state.window()
                )))
            }
            None => out.fill(-((self.vocab_size + 1) as f64).ln()),
        }
        Ok(())
    }
}

mod nullable_logprobs {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(values.iter().map(|v| if v.is_finite() { Some(*v) } else { None }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_frame() -> LatticeModel {
        let half = 0.5f64.ln();
        LatticeModel::new(
            2,
            2,
            2,
            vec![
                LatticeEntry { frame: 0, context: vec![-1, -1], logprobs: vec![half, f64::NEG_INFINITY, half] },
                LatticeEntry { frame: 1, context: vec![-1, 0], logprobs: vec![-3f64.ln(), -3f64.ln(), -3f64.ln()] },
            ],
        )
        .unwrap()
    }

    #[test]
    fn lookup_and_fallback() {
        let m = two_frame();
        let mut out = [0.0; 3];
        m.log_probs(0, &ModelState::initial(2), &mut out).unwrap();
        assert_eq!(out, [0.5f64.ln(), f64::NEG_INFINITY, 0.5f64.ln()]);
        m.log_probs(1, &ModelState::initial(2), &mut out).unwrap();
        assert!((out[0] + 3f64.ln()).abs() < 1e-15);
        assert!(matches!(m.log_probs(2, &ModelState::initial(2), &mut out), Err(Error::InvalidFrame { .. })));
        let strict = two_frame().strict(true);
        assert!(matches!(strict.log_probs(1, &ModelState::initial(2), &mut out), Err(Error::Validation(_))));
    }

    #[test]
    fn json_round_trip() {
        let m = two_frame();
        let back = LatticeModel::from_json(&m.to_json(), "mem").unwrap();
        assert_eq!(back.entries(), m.entries());
    }

    #[test]
    fn rejects_unnormalized_rows_and_bad_json() {
        let bad = LatticeModel::new(
            1,
            1,
            1,
            vec![LatticeEntry { frame: 0, context: vec![-1], logprobs: vec![-1.0, -1.0] }],
        );
        assert!(matches!(bad, Err(Error::Validation(_))));
        let err = LatticeModel::from_json("{\n \"num_frames\": 1,\n oops }", "x.json").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
