use crate::error::{Error, Result};
use crate::sharding::DirectionTriple;
use crate::topology::Axis;

/// Shape of a Transformer stack and the cube it runs on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerConfig {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub hidden: usize,
    pub p: usize,
    pub layers: usize,
    pub eps: f64,
}

impl TransformerConfig {
    /// `b=2, s=8, n=2, h=16` on a side-2 cube.
    pub fn toy() -> Self {
        TransformerConfig {
            batch: 2,
            seq: 8,
            heads: 2,
            hidden: 16,
            p: 2,
            layers: 1,
            eps: 1e-5,
        }
    }

    pub fn with_side(self, p: usize) -> Self {
        TransformerConfig { p, ..self }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p;
        let q = p * p;
        if p == 0 {
            return Err(Error::ConfigInvalid("cube side 0".into()));
        }
        for (dim, value, divisor) in [
            ("batch", self.batch, p),
            ("seq", self.seq, p),
            ("hidden", self.hidden, q),
            ("mlp hidden", 4 * self.hidden, q),
        ] {
            if value == 0 || value % divisor != 0 {
                return Err(Error::IndivisibleShape { dim, value, divisor });
            }
        }
        if self.heads == 0 || !self.heads.is_multiple_of(p) {
            return Err(Error::HeadsIndivisible { heads: self.heads, p });
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::ConfigInvalid(format!(
                "hidden {} is not a multiple of {} heads",
                self.hidden, self.heads
            )));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::ConfigInvalid(format!("layer-norm eps {}", self.eps)));
        }
        Ok(())
    }
}

/// Which of `y` (0) and `z` (1) currently carries the input direction.
/// Group 2, the weight direction, is always `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct GroupState {
    input_group: u8,
}

impl GroupState {
    pub fn new(input_group: u8) -> Result<Self> {
        if input_group > 1 {
            return Err(Error::GroupMismatch {
                expected: 0,
                got: input_group,
            });
        }
        Ok(GroupState { input_group })
    }

    pub fn index(self) -> u8 {
        self.input_group
    }

    pub fn toggled(self) -> Self {
        GroupState {
            input_group: 1 - self.input_group,
        }
    }

    pub fn directions(self) -> DirectionTriple {
        let (input, output) = if self.input_group == 0 {
            (Axis::Y, Axis::Z)
        } else {
            (Axis::Z, Axis::Y)
        };
        DirectionTriple {
            input,
            weight: Axis::X,
            output,
        }
    }

    pub(crate) fn of(d: DirectionTriple) -> Result<Self> {
        match (d.input, d.weight, d.output) {
            (Axis::Y, Axis::X, Axis::Z) => Ok(GroupState { input_group: 0 }),
            (Axis::Z, Axis::X, Axis::Y) => Ok(GroupState { input_group: 1 }),
            _ => Err(Error::LayoutMismatch(format!(
                "directions {d} do not keep x as the weight axis"
            ))),
        }
    }
}
