use super::{RecoverError, RecoveryVector, Result, PHI_DIM};
use super::phi::{SCALE_OFFSET, TRANSLATION_OFFSET};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

const MAGIC: &[u8; 4] = b"MFRN";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Square input silhouette side, pixels.
    pub image_size: usize,
    /// Average-pooling factor applied before the convolutions.
    pub pool: usize,
    pub conv_channels: usize,
    /// D: feature and annotation vector width.
    pub feature_dim: usize,
    pub attention_dim: usize,
    /// H: recurrent state width.
    pub hidden_dim: usize,
    pub init_hidden: usize,
    pub regressor_hidden: usize,
    pub ief_iterations: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            pool: 4,
            conv_channels: 8,
            feature_dim: 64,
            attention_dim: 64,
            hidden_dim: 128,
            init_hidden: 128,
            regressor_hidden: 256,
            ief_iterations: 3,
        }
    }
}

impl ModelConfig {
    /// Configuration used for finite-difference checks: under 10k parameters.
    pub fn tiny() -> Self {
        Self {
            conv_channels: 4,
            feature_dim: 8,
            attention_dim: 8,
            hidden_dim: 8,
            init_hidden: 8,
            regressor_hidden: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.pool,
            self.conv_channels,
            self.feature_dim,
            self.attention_dim,
            self.hidden_dim,
            self.init_hidden,
            self.regressor_hidden,
            self.ief_iterations,
        ];
        if dims.contains(&0) {
            return Err(RecoverError::Config("model dimensions must be positive".into()));
        }
        if self.image_size == 0 || self.image_size % (4 * self.pool) != 0 {
            return Err(RecoverError::Config(format!(
                "image size {} must be a positive multiple of 4·pool = {}",
                self.image_size,
                4 * self.pool
            )));
        }
        Ok(())
    }

    /// Side of the pooled input.
    pub fn pooled_size(&self) -> usize {
        self.image_size / self.pool
    }

    /// L: number of annotation vectors.
    pub fn locations(&self) -> usize {
        let side = self.pooled_size() / 4;
        side * side
    }

    pub fn lstm_input(&self) -> usize {
        2 * self.feature_dim + PHI_DIM
    }
}

/// Fixed per-coordinate spread of φ used to normalize network inputs and
/// scale regressed updates: pixels for translation, log units for scale.
pub fn phi_scale() -> Vec<f64> {
    let mut s = vec![1.0; PHI_DIM];
    s[TRANSLATION_OFFSET] = 10.0;
    s[TRANSLATION_OFFSET + 1] = 10.0;
    s[SCALE_OFFSET] = 0.1;
    s
}

/// Affine layer `W·x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Dense {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            w: DMatrix::zeros(out, inp),
            b: DVector::zeros(out),
        }
    }

    fn random(out: usize, inp: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let bound = gain * (6.0 / (inp + out) as f64).sqrt();
        Self {
            w: DMatrix::from_fn(out, inp, |_, _| rng.gen_range(-bound..bound)),
            b: DVector::zeros(out),
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.w * x + &self.b
    }

    /// Accumulates `g·xᵀ` and `g`; returns `Wᵀ·g`.
    pub(crate) fn backward(&self, grad: &mut Dense, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        grad.w.ger(1.0, g, x, 1.0);
        grad.b += g;
        self.w.tr_mul(g)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// Convolutions as `out × (in·9)` matrices over 3×3 patches.
    pub conv1: Dense,
    pub conv2: Dense,
    pub feature: Dense,
    pub att_map: DMatrix<f64>,
    pub att_hidden: Dense,
    pub att_score: DVector<f64>,
    pub att_bias: DVector<f64>,
    /// Gate rows ordered input, forget, output, candidate.
    pub lstm: Dense,
    pub init: [Dense; 3],
    pub regressor: [Dense; 3],
    pub mean_phi: RecoveryVector,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig, mean_phi: RecoveryVector) -> Result<Self> {
        config.validate()?;
        mean_phi.validate()?;
        let c = config;
        let (d, a, h) = (c.feature_dim, c.attention_dim, c.hidden_dim);
        Ok(Self {
            config: c.clone(),
            conv1: Dense::zeros(c.conv_channels, 9),
            conv2: Dense::zeros(d, 9 * c.conv_channels),
            feature: Dense::zeros(d, d),
            att_map: DMatrix::zeros(a, d),
            att_hidden: Dense::zeros(a, h),
            att_score: DVector::zeros(a),
            att_bias: DVector::zeros(1),
            lstm: Dense::zeros(4 * h, c.lstm_input() + h),
            init: [
                Dense::zeros(c.init_hidden, d),
                Dense::zeros(c.init_hidden, c.init_hidden),
                Dense::zeros(2 * h, c.init_hidden),
            ],
            regressor: [
                Dense::zeros(c.regressor_hidden, h + PHI_DIM),
                Dense::zeros(c.regressor_hidden, c.regressor_hidden),
                Dense::zeros(PHI_DIM, c.regressor_hidden),
            ],
            mean_phi,
        })
    }

    /// Glorot-uniform weights, zero biases except a unit LSTM forget bias;
    /// the last regressor layer starts small so initial predictions stay
    /// near `mean_phi`.
    pub fn random(config: &ModelConfig, mean_phi: RecoveryVector, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config, mean_phi)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config;
        let (d, a, h) = (c.feature_dim, c.attention_dim, c.hidden_dim);
        p.conv1 = Dense::random(c.conv_channels, 9, 1.0, &mut rng);
        p.conv2 = Dense::random(d, 9 * c.conv_channels, 1.0, &mut rng);
        p.feature = Dense::random(d, d, 1.0, &mut rng);
        p.att_map = Dense::random(a, d, 1.0, &mut rng).w;
        p.att_hidden = Dense::random(a, h, 1.0, &mut rng);
        p.att_score = Dense::random(a, 1, 1.0, &mut rng).w.column(0).into_owned();
        p.lstm = Dense::random(4 * h, c.lstm_input() + h, 1.0, &mut rng);
        p.lstm.b.rows_mut(h, h).fill(1.0);
        p.init = [
            Dense::random(c.init_hidden, d, 1.0, &mut rng),
            Dense::random(c.init_hidden, c.init_hidden, 1.0, &mut rng),
            Dense::random(2 * h, c.init_hidden, 0.1, &mut rng),
        ];
        p.regressor = [
            Dense::random(c.regressor_hidden, h + PHI_DIM, 1.0, &mut rng),
            Dense::random(c.regressor_hidden, c.regressor_hidden, 1.0, &mut rng),
            Dense::random(PHI_DIM, c.regressor_hidden, 0.01, &mut rng),
        ];
        Ok(p)
    }

    /// Same shapes, all trainable values zero.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config, self.mean_phi.clone()).expect("validated at construction")
    }

    /// Trainable tensors in a fixed order, with names.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("conv1.w", self.conv1.w.as_slice()),
            ("conv1.b", self.conv1.b.as_slice()),
            ("conv2.w", self.conv2.w.as_slice()),
            ("conv2.b", self.conv2.b.as_slice()),
            ("feature.w", self.feature.w.as_slice()),
            ("feature.b", self.feature.b.as_slice()),
            ("att.map", self.att_map.as_slice()),
            ("att.hidden.w", self.att_hidden.w.as_slice()),
            ("att.hidden.b", self.att_hidden.b.as_slice()),
            ("att.score", self.att_score.as_slice()),
            ("att.bias", self.att_bias.as_slice()),
            ("lstm.w", self.lstm.w.as_slice()),
            ("lstm.b", self.lstm.b.as_slice()),
            ("init0.w", self.init[0].w.as_slice()),
            ("init0.b", self.init[0].b.as_slice()),
            ("init1.w", self.init[1].w.as_slice()),
            ("init1.b", self.init[1].b.as_slice()),
            ("init2.w", self.init[2].w.as_slice()),
            ("init2.b", self.init[2].b.as_slice()),
            ("reg0.w", self.regressor[0].w.as_slice()),
            ("reg0.b", self.regressor[0].b.as_slice()),
            ("reg1.w", self.regressor[1].w.as_slice()),
            ("reg1.b", self.regressor[1].b.as_slice()),
            ("reg2.w", self.regressor[2].w.as_slice()),
            ("reg2.b", self.regressor[2].b.as_slice()),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let [i0, i1, i2] = &mut self.init;
        let [r0, r1, r2] = &mut self.regressor;
        vec![
            ("conv1.w", self.conv1.w.as_mut_slice()),
            ("conv1.b", self.conv1.b.as_mut_slice()),
            ("conv2.w", self.conv2.w.as_mut_slice()),
            ("conv2.b", self.conv2.b.as_mut_slice()),
            ("feature.w", self.feature.w.as_mut_slice()),
            ("feature.b", self.feature.b.as_mut_slice()),
            ("att.map", self.att_map.as_mut_slice()),
            ("att.hidden.w", self.att_hidden.w.as_mut_slice()),
            ("att.hidden.b", self.att_hidden.b.as_mut_slice()),
            ("att.score", self.att_score.as_mut_slice()),
            ("att.bias", self.att_bias.as_mut_slice()),
            ("lstm.w", self.lstm.w.as_mut_slice()),
            ("lstm.b", self.lstm.b.as_mut_slice()),
            ("init0.w", i0.w.as_mut_slice()),
            ("init0.b", i0.b.as_mut_slice()),
            ("init1.w", i1.w.as_mut_slice()),
            ("init1.b", i1.b.as_mut_slice()),
            ("init2.w", i2.w.as_mut_slice()),
            ("init2.b", i2.b.as_mut_slice()),
            ("reg0.w", r0.w.as_mut_slice()),
            ("reg0.b", r0.b.as_mut_slice()),
            ("reg1.w", r1.w.as_mut_slice()),
            ("reg1.b", r1.b.as_mut_slice()),
            ("reg2.w", r2.w.as_mut_slice()),
            ("reg2.b", r2.b.as_mut_slice()),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// `self += k·other`, tensor by tensor.
    pub(crate) fn add_scaled(&mut self, other: &ModelParams, k: f64) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += k * y);
        }
    }

    fn shape_of(&self, name: &str) -> Vec<u32> {
        let m = |x: &DMatrix<f64>| vec![x.nrows() as u32, x.ncols() as u32];
        let v = |x: &DVector<f64>| vec![x.len() as u32];
        let dense = |d: &Dense, w: bool| if w { m(&d.w) } else { v(&d.b) };
        let (layer, part) = name.split_once('.').unwrap_or((name, ""));
        let is_w = part == "w";
        match layer {
            "conv1" => dense(&self.conv1, is_w),
            "conv2" => dense(&self.conv2, is_w),
            "feature" => dense(&self.feature, is_w),
            "att" => match part {
                "map" => m(&self.att_map),
                "hidden.w" => m(&self.att_hidden.w),
                "hidden.b" => v(&self.att_hidden.b),
                "score" => v(&self.att_score),
                _ => v(&self.att_bias),
            },
            "lstm" => dense(&self.lstm, is_w),
            "init0" | "init1" | "init2" => dense(&self.init[layer[4..].parse::<usize>().unwrap()], is_w),
            _ => dense(&self.regressor[layer[3..].parse::<usize>().unwrap()], is_w),
        }
    }

    /// Binary layout: magic, version, JSON config, then named tensors each
    /// tagged with its shape; little-endian throughout.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_u32::<LittleEndian>(PARAMS_VERSION)?;
        let config = serde_json::to_vec(&self.config).expect("config serializes");
        out.write_u32::<LittleEndian>(config.len() as u32)?;
        out.write_all(&config)?;
        let mut entries: Vec<(&str, Vec<u32>, Vec<f64>)> = self
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, self.shape_of(n), t.to_vec()))
            .collect();
        entries.push(("mean_phi", vec![PHI_DIM as u32], self.mean_phi.to_raw()));
        out.write_u32::<LittleEndian>(entries.len() as u32)?;
        for (name, shape, data) in entries {
            out.write_u16::<LittleEndian>(name.len() as u16)?;
            out.write_all(name.as_bytes())?;
            out.write_u8(shape.len() as u8)?;
            for d in shape {
                out.write_u32::<LittleEndian>(d)?;
            }
            for x in data {
                out.write_f64::<LittleEndian>(x)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let bad = |m: String| RecoverError::Format(m);
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a model parameter file".into()));
        }
        let version = input.read_u32::<LittleEndian>()?;
        if version != PARAMS_VERSION {
            return Err(bad(format!("parameter file version {version}, expected {PARAMS_VERSION}")));
        }
        let len = input.read_u32::<LittleEndian>()? as usize;
        let mut config = vec![0u8; len];
        input.read_exact(&mut config)?;
        let config: ModelConfig = serde_json::from_slice(&config).map_err(|e| bad(format!("config: {e}")))?;
        let placeholder = RecoveryVector::from_flat(&{
            let mut v = vec![0.0; PHI_DIM];
            v[SCALE_OFFSET] = 1.0;
            v
        })?;
        let mut p = Self::zeros(&config, placeholder)?;
        let count = input.read_u32::<LittleEndian>()? as usize;
        let expected = p.tensors().len() + 1;
        if count != expected {
            return Err(bad(format!("{count} tensors, expected {expected}")));
        }
        let mut mean = None;
        let mut next = 0;
        for _ in 0..count {
            let n = input.read_u16::<LittleEndian>()? as usize;
            let mut name = vec![0u8; n];
            input.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8".into()))?;
            let ndim = input.read_u8()? as usize;
            let shape = (0..ndim).map(|_| input.read_u32::<LittleEndian>()).collect::<std::io::Result<Vec<_>>>()?;
            let size: usize = shape.iter().map(|&d| d as usize).product();
            let mut data = vec![0.0; size];
            input.read_f64_into::<LittleEndian>(&mut data)?;
            if name == "mean_phi" {
                mean = Some(RecoveryVector::from_raw(&data)?);
                continue;
            }
            let Some(&(expected_name, _)) = p.tensors().get(next) else {
                return Err(bad(format!("unexpected tensor {name}")));
            };
            let want = p.shape_of(expected_name);
            if name != expected_name || shape != want {
                return Err(bad(format!("tensor {name} {shape:?} does not match {expected_name} {want:?}")));
            }
            p.tensors_mut()[next].1.copy_from_slice(&data);
            next += 1;
        }
        p.mean_phi = mean.ok_or_else(|| bad("missing mean_phi".into()))?;
        if !p.is_finite() {
            return Err(RecoverError::NonFinite("model parameters".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
