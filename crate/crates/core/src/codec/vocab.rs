use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::gate::GateKind;

/// Ordered gate kinds. Token ids: `0` background, `1..=N` gates, `N+1` padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GateKind>", into = "Vec<GateKind>")]
pub struct GateVocabulary {
    kinds: Vec<GateKind>,
}

impl GateVocabulary {
    pub fn new(kinds: Vec<GateKind>) -> Result<Self> {
        if kinds.is_empty() {
            return Err(validation("vocabulary needs at least one gate kind"));
        }
        for (i, k) in kinds.iter().enumerate() {
            if kinds[..i].contains(k) {
                return Err(validation(format!("duplicate gate kind {k} in vocabulary")));
            }
        }
        Ok(Self { kinds })
    }

    /// `{H, CX}`.
    pub fn entanglement() -> Self {
        Self::new(GateKind::ENTANGLEMENT_POOL.to_vec()).unwrap()
    }

    /// `{H, CX, Z, X, CCX, SWAP}`.
    pub fn compile() -> Self {
        Self::new(GateKind::COMPILE_POOL.to_vec()).unwrap()
    }

    pub fn kinds(&self) -> &[GateKind] {
        &self.kinds
    }

    pub fn num_gates(&self) -> usize {
        self.kinds.len()
    }

    /// Feature dimension of the embedding, `N + 2`.
    pub fn dim(&self) -> usize {
        self.kinds.len() + 2
    }

    pub fn background(&self) -> i32 {
        0
    }

    pub fn padding(&self) -> i32 {
        self.kinds.len() as i32 + 1
    }

    pub fn id(&self, kind: GateKind) -> Option<i32> {
        self.kinds.iter().position(|&k| k == kind).map(|i| i as i32 + 1)
    }

    pub fn kind(&self, id: i32) -> Option<GateKind> {
        if id >= 1 && (id as usize) <= self.kinds.len() {
            Some(self.kinds[id as usize - 1])
        } else {
            None
        }
    }
}

impl TryFrom<Vec<GateKind>> for GateVocabulary {
    type Error = crate::error::Error;

    fn try_from(kinds: Vec<GateKind>) -> Result<Self> {
        Self::new(kinds)
    }
}

impl From<GateVocabulary> for Vec<GateKind> {
    fn from(v: GateVocabulary) -> Self {
        v.kinds
    }
}
