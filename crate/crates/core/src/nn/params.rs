use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{GroupState, TransformerConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sharding::{
    collect, collect_vector, partition, partition_vector, read_matrix_file, write_matrix_file, DiagonalVector,
    GlobalMatrix, Layout, MatrixFile, ShardedMatrix,
};
use crate::topology::CubeTopology;

/// Weight in the weight layout of the layer's directions, bias on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<T> {
    pub w: ShardedMatrix<T>,
    pub bias: DiagonalVector<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<T> {
    pub gamma: DiagonalVector<T>,
    pub beta: DiagonalVector<T>,
}

/// Fused QKV projection (columns packed per block) and output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    pub qkv: LinearParams<T>,
    pub out: LinearParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    pub fc1: LinearParams<T>,
    pub fc2: LinearParams<T>,
}

/// One rank's parameters (or parameter gradients) of a Transformer layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerShard<T> {
    pub ln1: LayerNormParams<T>,
    pub attn: AttentionParams<T>,
    pub ln2: LayerNormParams<T>,
    pub mlp: MlpParams<T>,
}

/// Global parameters (or gradients) of one pre-norm Transformer layer.
///
/// `w_qkv` is `h × 3h` with columns `[Q | K | V]`; the MLP expands to `4h`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub ln1_gamma: Vec<T>,
    pub ln1_beta: Vec<T>,
    pub w_qkv: GlobalMatrix<T>,
    pub b_qkv: Vec<T>,
    pub w_out: GlobalMatrix<T>,
    pub b_out: Vec<T>,
    pub ln2_gamma: Vec<T>,
    pub ln2_beta: Vec<T>,
    pub w1: GlobalMatrix<T>,
    pub b1: Vec<T>,
    pub w2: GlobalMatrix<T>,
    pub b2: Vec<T>,
}

const NAMES: [&str; 12] = [
    "ln1_gamma",
    "ln1_beta",
    "w_qkv",
    "b_qkv",
    "w_out",
    "b_out",
    "ln2_gamma",
    "ln2_beta",
    "w1",
    "b1",
    "w2",
    "b2",
];

fn row<T: Scalar>(v: &[T]) -> GlobalMatrix<T> {
    GlobalMatrix::from_vec(1, v.len(), v.to_vec()).expect("row vector")
}

impl<T: Scalar> LayerParams<T> {
    fn shapes(cfg: &TransformerConfig) -> [(usize, usize); 12] {
        let h = cfg.hidden;
        [
            (1, h),
            (1, h),
            (h, 3 * h),
            (1, 3 * h),
            (h, h),
            (1, h),
            (1, h),
            (1, h),
            (h, 4 * h),
            (1, 4 * h),
            (4 * h, h),
            (1, h),
        ]
    }

    fn from_entries(mut m: Vec<GlobalMatrix<T>>) -> Self {
        let mut next = || m.remove(0);
        LayerParams {
            ln1_gamma: next().into_vec(),
            ln1_beta: next().into_vec(),
            w_qkv: next(),
            b_qkv: next().into_vec(),
            w_out: next(),
            b_out: next().into_vec(),
            ln2_gamma: next().into_vec(),
            ln2_beta: next().into_vec(),
            w1: next(),
            b1: next().into_vec(),
            w2: next(),
            b2: next().into_vec(),
        }
    }

    /// Every tensor as a matrix (vectors as one row), in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, GlobalMatrix<T>)> {
        let m = [
            row(&self.ln1_gamma),
            row(&self.ln1_beta),
            self.w_qkv.clone(),
            row(&self.b_qkv),
            self.w_out.clone(),
            row(&self.b_out),
            row(&self.ln2_gamma),
            row(&self.ln2_beta),
            self.w1.clone(),
            row(&self.b1),
            self.w2.clone(),
            row(&self.b2),
        ];
        NAMES.into_iter().zip(m).collect()
    }

    pub fn map(&self, f: impl Fn(&'static str, &GlobalMatrix<T>) -> GlobalMatrix<T>) -> Self {
        Self::from_entries(self.entries().iter().map(|(n, m)| f(n, m)).collect())
    }

    /// The same values in another precision.
    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        LayerParams::from_entries(
            self.entries()
                .iter()
                .map(|(_, m)| m.map(|v| U::from_f64(Scalar::to_f64(v))))
                .collect(),
        )
    }

    pub fn zeros(cfg: &TransformerConfig) -> Self {
        Self::from_entries(
            Self::shapes(cfg)
                .iter()
                .map(|&(r, c)| GlobalMatrix::zeros(r, c))
                .collect(),
        )
    }

    /// Fixed-seed uniform values in `[−0.1, 0.1]`; layer-norm gains are `1 + u`.
    pub fn init(cfg: &TransformerConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ms = NAMES
            .iter()
            .zip(Self::shapes(cfg))
            .map(|(name, (r, c))| {
                let base = if name.ends_with("gamma") { 1.0 } else { 0.0 };
                GlobalMatrix::from_fn(r, c, |_, _| T::from_f64(base + rng.random_range(-0.1..=0.1)))
            })
            .collect();
        Self::from_entries(ms)
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.entries().into_iter().flat_map(|(_, m)| m.into_vec()).collect()
    }

    pub fn from_flat(cfg: &TransformerConfig, flat: &[T]) -> Result<Self> {
        let shapes = Self::shapes(cfg);
        let total: usize = shapes.iter().map(|(r, c)| r * c).sum();
        if flat.len() != total {
            return Err(Error::LengthMismatch {
                op: "LayerParams::from_flat",
                expected: total,
                got: flat.len(),
            });
        }
        let mut at = 0;
        let ms = shapes
            .iter()
            .map(|&(r, c)| {
                let m = GlobalMatrix::from_vec(r, c, flat[at..at + r * c].to_vec());
                at += r * c;
                m
            })
            .collect::<Result<_>>()?;
        Ok(Self::from_entries(ms))
    }

    /// Writes one matrix file per tensor into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        std::fs::create_dir_all(dir.as_ref())?;
        for (name, m) in self.entries() {
            write_matrix_file(dir.as_ref().join(format!("{name}.bin")), &m)?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>, cfg: &TransformerConfig) -> Result<Self> {
        let ms = NAMES
            .iter()
            .zip(Self::shapes(cfg))
            .map(|(name, shape)| {
                let file = read_matrix_file(dir.as_ref().join(format!("{name}.bin")))?;
                if file.shape() != shape {
                    return Err(Error::ShapeMismatch(format!(
                        "{name} is {:?}, expected {shape:?}",
                        file.shape()
                    )));
                }
                let m = match file {
                    MatrixFile::F64(m) => m.map(T::from_f64),
                    MatrixFile::F32(m) => m.map(|v| T::from_f64(v as f64)),
                };
                Ok(m)
            })
            .collect::<Result<_>>()?;
        Ok(Self::from_entries(ms))
    }
}

/// Reorders `[Q | K | V]` columns so column block `q` of width `3h/p`
/// holds `[Q_q | K_q | V_q]`.
pub fn pack_qkv<T: Scalar>(m: &GlobalMatrix<T>, p: usize) -> GlobalMatrix<T> {
    let h = m.cols() / 3;
    let w = h / p;
    GlobalMatrix::from_fn(m.rows(), m.cols(), |r, c| {
        let (q, rest) = (c / (3 * w), c % (3 * w));
        let (part, k) = (rest / w, rest % w);
        m.get(r, part * h + q * w + k)
    })
}

pub fn unpack_qkv<T: Scalar>(m: &GlobalMatrix<T>, p: usize) -> GlobalMatrix<T> {
    let h = m.cols() / 3;
    let w = h / p;
    GlobalMatrix::from_fn(m.rows(), m.cols(), |r, c| {
        let (part, rest) = (c / h, c % h);
        let (q, k) = (rest / w, rest % w);
        m.get(r, q * 3 * w + part * w + k)
    })
}

fn shard_linear<T: Scalar>(
    w: &GlobalMatrix<T>,
    b: &[T],
    group: GroupState,
    topo: &CubeTopology,
) -> Result<Vec<LinearParams<T>>> {
    let ws = partition(w, Layout::Weight, group.directions(), topo)?;
    let bs = partition_vector(b, topo)?;
    Ok(ws
        .into_iter()
        .zip(bs)
        .map(|(w, bias)| LinearParams { w, bias })
        .collect())
}

fn shard_norm<T: Scalar>(g: &[T], b: &[T], topo: &CubeTopology) -> Result<Vec<LayerNormParams<T>>> {
    let gs = partition_vector(g, topo)?;
    let bs = partition_vector(b, topo)?;
    Ok(gs
        .into_iter()
        .zip(bs)
        .map(|(gamma, beta)| LayerNormParams { gamma, beta })
        .collect())
}

/// Distributes a layer whose input arrives in `group` (one entry per rank).
pub fn shard_layer<T: Scalar>(
    params: &LayerParams<T>,
    cfg: &TransformerConfig,
    group: GroupState,
    topo: &CubeTopology,
) -> Result<Vec<LayerShard<T>>> {
    cfg.validate()?;
    if topo.side() != cfg.p {
        return Err(Error::ConfigInvalid(format!(
            "config side {} on a side-{} cube",
            cfg.p,
            topo.side()
        )));
    }
    let p = cfg.p;
    let other = group.toggled();
    let qkv = shard_linear(
        &pack_qkv(&params.w_qkv, p),
        pack_qkv(&row(&params.b_qkv), p).data(),
        group,
        topo,
    )?;
    let out = shard_linear(&params.w_out, &params.b_out, other, topo)?;
    let fc1 = shard_linear(&params.w1, &params.b1, group, topo)?;
    let fc2 = shard_linear(&params.w2, &params.b2, other, topo)?;
    let ln1 = shard_norm(&params.ln1_gamma, &params.ln1_beta, topo)?;
    let ln2 = shard_norm(&params.ln2_gamma, &params.ln2_beta, topo)?;
    let mut shards = Vec::with_capacity(topo.ranks());
    for (((((qkv, out), fc1), fc2), ln1), ln2) in qkv.into_iter().zip(out).zip(fc1).zip(fc2).zip(ln1).zip(ln2) {
        shards.push(LayerShard {
            ln1,
            attn: AttentionParams { qkv, out },
            ln2,
            mlp: MlpParams { fc1, fc2 },
        });
    }
    Ok(shards)
}

/// Reassembles global gradients (or parameters) from per-rank shards.
pub fn collect_layer_grads<T: Scalar>(family: &[LayerShard<T>]) -> Result<LayerParams<T>> {
    let first = family
        .first()
        .ok_or_else(|| Error::InconsistentFamily("no layer shards".into()))?;
    let p = first.attn.qkv.w.side();
    let mat = |f: &dyn Fn(&LayerShard<T>) -> &ShardedMatrix<T>| {
        collect(&family.iter().map(|s| f(s).clone()).collect::<Vec<_>>())
    };
    let vec = |f: &dyn Fn(&LayerShard<T>) -> &DiagonalVector<T>| {
        collect_vector(&family.iter().map(|s| f(s).clone()).collect::<Vec<_>>())
    };
    Ok(LayerParams {
        ln1_gamma: vec(&|s| &s.ln1.gamma)?,
        ln1_beta: vec(&|s| &s.ln1.beta)?,
        w_qkv: unpack_qkv(&mat(&|s| &s.attn.qkv.w)?, p),
        b_qkv: unpack_qkv(&row(&vec(&|s| &s.attn.qkv.bias)?), p).into_vec(),
        w_out: mat(&|s| &s.attn.out.w)?,
        b_out: vec(&|s| &s.attn.out.bias)?,
        ln2_gamma: vec(&|s| &s.ln2.gamma)?,
        ln2_beta: vec(&|s| &s.ln2.beta)?,
        w1: mat(&|s| &s.mlp.fc1.w)?,
        b1: vec(&|s| &s.mlp.fc1.bias)?,
        w2: mat(&|s| &s.mlp.fc2.w)?,
        b2: vec(&|s| &s.mlp.fc2.bias)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qkv_packing_round_trips() {
        let m = GlobalMatrix::from_fn(2, 12, |r, c| (r * 12 + c) as f64);
        let packed = pack_qkv(&m, 2);
        // block 0 = Q cols 0..2, K cols 4..6, V cols 8..10
        assert_eq!(&packed.row(0)[..6], &[0.0, 1.0, 4.0, 5.0, 8.0, 9.0]);
        assert_eq!(unpack_qkv(&packed, 2), m);
        assert_eq!(pack_qkv(&m, 1), m);
    }

    #[test]
    fn shard_then_collect_is_identity() {
        let cfg = TransformerConfig::toy();
        let topo = CubeTopology::with_side(2).unwrap();
        let params = LayerParams::<f64>::init(&cfg, 3);
        for g in [GroupState::new(0).unwrap(), GroupState::new(1).unwrap()] {
            let shards = shard_layer(&params, &cfg, g, &topo).unwrap();
            assert_eq!(collect_layer_grads(&shards).unwrap(), params);
        }
        assert_eq!(LayerParams::from_flat(&cfg, &params.to_flat()).unwrap(), params);
    }

    #[test]
    fn save_and_load_round_trip() {
        let cfg = TransformerConfig::toy();
        let params = LayerParams::<f64>::init(&cfg, 4);
        let dir = std::env::temp_dir().join(format!("cube3d-params-{}", std::process::id()));
        params.save(&dir).unwrap();
        assert_eq!(LayerParams::<f64>::load(&dir, &cfg).unwrap(), params);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
