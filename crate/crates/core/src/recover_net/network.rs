//! Forward passes with tapes, and the matching reverse passes.
//!
//! Per time step: encode the frame, attend over its annotation vectors
//! conditioned on `h_{t−1}`, run the LSTM on `[feature, context, φ_{t−1}]`,
//! then refine `φ_{t−1}` with IEF driven by `h_t`. IEF could instead run once
//! per clip or be seeded from the mean every step; seeding from the previous
//! estimate keeps the recurrence on φ explicit.

use super::params::{phi_scale, Dense, ModelParams};
use super::{RecoverError, RecoveryVector, Result, PHI_DIM};
use crate::scene_gen::Image;
use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedFrame {
    pub feature: DVector<f64>,
    /// D × L; column i is the annotation vector `a^i`.
    pub low_level_map: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub c: DVector<f64>,
    pub h: DVector<f64>,
}

fn tanh_m(m: DMatrix<f64>) -> DMatrix<f64> {
    m.map(f64::tanh)
}

fn tanh_grad(g: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    g.zip_map(y, |g, y| g * (1.0 - y * y))
}

fn tanh_grad_v(g: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    g.zip_map(y, |g, y| g * (1.0 - y * y))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// 3×3 patches at stride 2 with zero padding 1: `(C·9) × (side/2)²`.
fn im2col(input: &DMatrix<f64>, side: usize) -> DMatrix<f64> {
    let channels = input.nrows();
    let out = side / 2;
    DMatrix::from_fn(channels * 9, out * out, |row, col| {
        let (c, k) = (row / 9, row % 9);
        let (oy, ox) = (col / out, col % out);
        let iy = (2 * oy + k / 3) as isize - 1;
        let ix = (2 * ox + k % 3) as isize - 1;
        if iy < 0 || ix < 0 || iy >= side as isize || ix >= side as isize {
            0.0
        } else {
            input[(c, iy as usize * side + ix as usize)]
        }
    })
}

fn col2im(cols: &DMatrix<f64>, channels: usize, side: usize) -> DMatrix<f64> {
    let out = side / 2;
    let mut img = DMatrix::zeros(channels, side * side);
    for col in 0..out * out {
        let (oy, ox) = (col / out, col % out);
        for row in 0..channels * 9 {
            let (c, k) = (row / 9, row % 9);
            let iy = (2 * oy + k / 3) as isize - 1;
            let ix = (2 * ox + k % 3) as isize - 1;
            if iy >= 0 && ix >= 0 && iy < side as isize && ix < side as isize {
                img[(c, iy as usize * side + ix as usize)] += cols[(row, col)];
            }
        }
    }
    img
}

fn conv(layer: &Dense, cols: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = &layer.w * cols;
    for mut col in z.column_iter_mut() {
        col += &layer.b;
    }
    tanh_m(z)
}

fn conv_backward(layer: &Dense, grad: &mut Dense, cols: &DMatrix<f64>, y: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let pre = tanh_grad(g, y);
    grad.w += &pre * cols.transpose();
    grad.b += pre.column_sum();
    layer.w.tr_mul(&pre)
}

pub(crate) struct EncoderTape {
    cols1: DMatrix<f64>,
    y1: DMatrix<f64>,
    cols2: DMatrix<f64>,
    mean: DVector<f64>,
    pub out: EncodedFrame,
}

fn check_image(image: &Image, params: &ModelParams) -> Result<()> {
    let n = params.config.image_size;
    if image.width != n || image.height != n || image.data.len() != n * n {
        return Err(RecoverError::Shape(format!(
            "image is {}×{}, model expects {n}×{n}",
            image.width, image.height
        )));
    }
    Ok(())
}

pub(crate) fn encode_tape(image: &Image, params: &ModelParams) -> Result<EncoderTape> {
    check_image(image, params)?;
    let cfg = &params.config;
    let (side, pool) = (cfg.pooled_size(), cfg.pool);
    let norm = 1.0 / (pool * pool) as f64;
    let pooled = DMatrix::from_fn(1, side * side, |_, i| {
        let (y, x) = (i / side, i % side);
        let mut acc = 0.0;
        for dy in 0..pool {
            for dx in 0..pool {
                acc += image.get(x * pool + dx, y * pool + dy);
            }
        }
        acc * norm
    });
    let cols1 = im2col(&pooled, side);
    let y1 = conv(&params.conv1, &cols1);
    let cols2 = im2col(&y1, side / 2);
    let map = conv(&params.conv2, &cols2);
    let mean = map.column_mean();
    let feature = params.feature.apply(&mean).map(f64::tanh);
    if !feature.iter().chain(map.iter()).all(|v| v.is_finite()) {
        return Err(RecoverError::NonFinite("encoder output".into()));
    }
    Ok(EncoderTape {
        cols1,
        y1,
        cols2,
        mean,
        out: EncodedFrame {
            feature,
            low_level_map: map,
        },
    })
}

fn encode_backward(params: &ModelParams, grad: &mut ModelParams, tape: &EncoderTape, g_feature: &DVector<f64>, g_map: &DMatrix<f64>) {
    let side = params.config.pooled_size();
    let pre = tanh_grad_v(g_feature, &tape.out.feature);
    let g_mean = params.feature.backward(&mut grad.feature, &tape.mean, &pre);
    let l = g_map.ncols() as f64;
    let mut g_map = g_map.clone();
    for mut col in g_map.column_iter_mut() {
        col.axpy(1.0 / l, &g_mean, 1.0);
    }
    let g_cols2 = conv_backward(&params.conv2, &mut grad.conv2, &tape.cols2, &tape.out.low_level_map, &g_map);
    let g_y1 = col2im(&g_cols2, params.config.conv_channels, side / 2);
    conv_backward(&params.conv1, &mut grad.conv1, &tape.cols1, &tape.y1, &g_y1);
}

pub(crate) struct AttentionTape {
    z: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub context: DVector<f64>,
}

pub(crate) fn attention_tape(map: &DMatrix<f64>, h_prev: &DVector<f64>, params: &ModelParams) -> AttentionTape {
    let u = params.att_hidden.apply(h_prev);
    let mut pre = &params.att_map * map;
    for mut col in pre.column_iter_mut() {
        col += &u;
    }
    let z = tanh_m(pre);
    let logits = z.tr_mul(&params.att_score).add_scalar(params.att_bias[0]);
    let top = logits.max();
    let exp = logits.map(|e| (e - top).exp());
    let alpha = &exp / exp.sum();
    let context = map * &alpha;
    AttentionTape { z, alpha, context }
}

/// Returns gradients with respect to the map and the previous hidden state.
fn attention_backward(
    params: &ModelParams,
    grad: &mut ModelParams,
    tape: &AttentionTape,
    map: &DMatrix<f64>,
    h_prev: &DVector<f64>,
    g_context: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let g_alpha = map.tr_mul(g_context);
    let mut g_map = g_context * tape.alpha.transpose();
    let mean = tape.alpha.dot(&g_alpha);
    let g_logits = tape.alpha.zip_map(&g_alpha, |a, g| a * (g - mean));
    grad.att_bias[0] += g_logits.sum();
    grad.att_score += &tape.z * &g_logits;
    let g_z = &params.att_score * g_logits.transpose();
    let g_pre = tanh_grad(&g_z, &tape.z);
    grad.att_map += &g_pre * map.transpose();
    g_map += params.att_map.tr_mul(&g_pre);
    let g_u = g_pre.column_sum();
    let g_h = params.att_hidden.backward(&mut grad.att_hidden, h_prev, &g_u);
    (g_map, g_h)
}

pub(crate) struct LstmTape {
    input: DVector<f64>,
    gates: [DVector<f64>; 4],
    c_prev: DVector<f64>,
    tanh_c: DVector<f64>,
    pub state: RecurrentState,
}

pub(crate) fn lstm_tape(x: &DVector<f64>, state: &RecurrentState, params: &ModelParams) -> LstmTape {
    let h = state.h.len();
    let input = DVector::from_iterator(x.len() + h, x.iter().chain(state.h.iter()).copied());
    let z = params.lstm.apply(&input);
    let gate = |k: usize, f: fn(f64) -> f64| z.rows(k * h, h).map(f);
    let gates = [gate(0, sigmoid), gate(1, sigmoid), gate(2, sigmoid), gate(3, f64::tanh)];
    let c = gates[1].component_mul(&state.c) + gates[0].component_mul(&gates[3]);
    let tanh_c = c.map(f64::tanh);
    let hidden = gates[2].component_mul(&tanh_c);
    LstmTape {
        input,
        gates,
        c_prev: state.c.clone(),
        tanh_c,
        state: RecurrentState { c, h: hidden },
    }
}

/// Returns gradients with respect to the input, the previous hidden state and
/// the previous cell.
fn lstm_backward(
    params: &ModelParams,
    grad: &mut ModelParams,
    tape: &LstmTape,
    g_h: &DVector<f64>,
    g_c: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let [i, f, o, g] = &tape.gates;
    let n = g_h.len();
    let g_o = g_h.component_mul(&tape.tanh_c);
    let g_cell = g_c + g_h.component_mul(o).zip_map(&tape.tanh_c, |v, t| v * (1.0 - t * t));
    let g_f = g_cell.component_mul(&tape.c_prev);
    let g_i = g_cell.component_mul(g);
    let g_g = g_cell.component_mul(i);
    let g_c_prev = g_cell.component_mul(f);
    let mut g_z = DVector::zeros(4 * n);
    let sig = |gv: &DVector<f64>, y: &DVector<f64>| gv.zip_map(y, |a, s| a * s * (1.0 - s));
    g_z.rows_mut(0, n).copy_from(&sig(&g_i, i));
    g_z.rows_mut(n, n).copy_from(&sig(&g_f, f));
    g_z.rows_mut(2 * n, n).copy_from(&sig(&g_o, o));
    g_z.rows_mut(3 * n, n).copy_from(&tanh_grad_v(&g_g, g));
    let g_input = params.lstm.backward(&mut grad.lstm, &tape.input, &g_z);
    let x_len = g_input.len() - n;
    (g_input.rows(0, x_len).into_owned(), g_input.rows(x_len, n).into_owned(), g_c_prev)
}

pub(crate) struct InitTape {
    feature: DVector<f64>,
    a1: DVector<f64>,
    a2: DVector<f64>,
    pub state: RecurrentState,
}

pub(crate) fn init_tape(feature: &DVector<f64>, params: &ModelParams) -> InitTape {
    let a1 = params.init[0].apply(feature).map(f64::tanh);
    let a2 = params.init[1].apply(&a1).map(f64::tanh);
    let out = params.init[2].apply(&a2);
    let h = params.config.hidden_dim;
    InitTape {
        feature: feature.clone(),
        a1,
        a2,
        state: RecurrentState {
            c: out.rows(0, h).into_owned(),
            h: out.rows(h, h).into_owned(),
        },
    }
}

fn init_backward(params: &ModelParams, grad: &mut ModelParams, tape: &InitTape, g_c: &DVector<f64>, g_h: &DVector<f64>) -> DVector<f64> {
    let h = g_c.len();
    let mut g_out = DVector::zeros(2 * h);
    g_out.rows_mut(0, h).copy_from(g_c);
    g_out.rows_mut(h, h).copy_from(g_h);
    let [l0, l1, l2] = &params.init;
    let [g0, g1, g2] = &mut grad.init;
    let g_a2 = l2.backward(g2, &tape.a2, &g_out);
    let g_a1 = l1.backward(g1, &tape.a1, &tanh_grad_v(&g_a2, &tape.a2));
    l0.backward(g0, &tape.feature, &tanh_grad_v(&g_a1, &tape.a1))
}

/// Network view of φ: centred on the mean and divided by the fixed spread.
fn normalize_phi(phi: &[f64], params: &ModelParams, inv_scale: &[f64]) -> Vec<f64> {
    let mean = params.mean_phi.to_raw();
    phi.iter().zip(&mean).zip(inv_scale).map(|((p, m), s)| (p - m) * s).collect()
}

struct IefIteration {
    input: DVector<f64>,
    y1: DVector<f64>,
    y2: DVector<f64>,
}

pub(crate) struct IefTape {
    iterations: Vec<IefIteration>,
    pub phi: Vec<f64>,
}

pub(crate) fn ief_tape(h: &DVector<f64>, phi_init: &[f64], params: &ModelParams, n_iter: usize) -> IefTape {
    let scale = phi_scale();
    let inv: Vec<f64> = scale.iter().map(|s| 1.0 / s).collect();
    let mut phi = phi_init.to_vec();
    let mut iterations = Vec::with_capacity(n_iter);
    for _ in 0..n_iter {
        let input = DVector::from_iterator(h.len() + PHI_DIM, h.iter().copied().chain(normalize_phi(&phi, params, &inv)));
        let y1 = params.regressor[0].apply(&input).map(f64::tanh);
        let y2 = params.regressor[1].apply(&y1).map(f64::tanh);
        let delta = params.regressor[2].apply(&y2);
        for ((p, d), s) in phi.iter_mut().zip(delta.iter()).zip(&scale) {
            *p += d * s;
        }
        iterations.push(IefIteration { input, y1, y2 });
    }
    IefTape { iterations, phi }
}

/// Returns gradients with respect to `h` and the initial φ.
fn ief_backward(params: &ModelParams, grad: &mut ModelParams, tape: &IefTape, g_phi: &[f64]) -> (DVector<f64>, Vec<f64>) {
    let scale = phi_scale();
    let h_len = params.config.hidden_dim;
    let mut g_h = DVector::zeros(h_len);
    let mut g_phi = g_phi.to_vec();
    let [l0, l1, l2] = &params.regressor;
    for it in tape.iterations.iter().rev() {
        let g_delta = DVector::from_iterator(PHI_DIM, g_phi.iter().zip(&scale).map(|(g, s)| g * s));
        let [g0, g1, g2] = &mut grad.regressor;
        let g_y2 = l2.backward(g2, &it.y2, &g_delta);
        let g_y1 = l1.backward(g1, &it.y1, &tanh_grad_v(&g_y2, &it.y2));
        let g_in = l0.backward(g0, &it.input, &tanh_grad_v(&g_y1, &it.y1));
        g_h += g_in.rows(0, h_len);
        for (k, g) in g_phi.iter_mut().enumerate() {
            *g += g_in[h_len + k] / scale[k];
        }
    }
    (g_h, g_phi)
}

struct StepTape {
    attention: AttentionTape,
    lstm: LstmTape,
    ief: IefTape,
    h_prev: DVector<f64>,
}

pub(crate) struct ClipTape {
    encoders: Vec<EncoderTape>,
    init: InitTape,
    steps: Vec<StepTape>,
}

impl ClipTape {
    /// Raw φ_t for t = 1..T.
    pub fn phis(&self) -> Vec<Vec<f64>> {
        self.steps.iter().map(|s| s.ief.phi.clone()).collect()
    }
}

pub(crate) fn clip_forward(images: &[Image], params: &ModelParams) -> Result<ClipTape> {
    if images.is_empty() {
        return Err(RecoverError::Shape("clip has no frames".into()));
    }
    let encoders = images.iter().map(|im| encode_tape(im, params)).collect::<Result<Vec<_>>>()?;
    let init = init_tape(&encoders[0].out.feature, params);
    let mut state = init.state.clone();
    let mut phi = params.mean_phi.to_raw();
    let inv: Vec<f64> = phi_scale().iter().map(|s| 1.0 / s).collect();
    let mut steps = Vec::with_capacity(images.len());
    for enc in &encoders {
        let attention = attention_tape(&enc.out.low_level_map, &state.h, params);
        let x = DVector::from_iterator(
            params.config.lstm_input(),
            enc.out
                .feature
                .iter()
                .chain(attention.context.iter())
                .copied()
                .chain(normalize_phi(&phi, params, &inv)),
        );
        let lstm = lstm_tape(&x, &state, params);
        let ief = ief_tape(&lstm.state.h, &phi, params, params.config.ief_iterations);
        if !ief.phi.iter().all(|v| v.is_finite()) {
            return Err(RecoverError::NonFinite("regressed φ".into()));
        }
        phi = ief.phi.clone();
        let h_prev = std::mem::replace(&mut state, lstm.state.clone()).h;
        steps.push(StepTape {
            attention,
            lstm,
            ief,
            h_prev,
        });
    }
    Ok(ClipTape { encoders, init, steps })
}

/// Backpropagates per-step gradients on raw φ_t through the whole clip.
pub(crate) fn clip_backward(params: &ModelParams, tape: &ClipTape, g_phis: &[Vec<f64>]) -> ModelParams {
    let mut grad = params.zeros_like();
    let cfg = &params.config;
    let (d, h) = (cfg.feature_dim, cfg.hidden_dim);
    let inv: Vec<f64> = phi_scale().iter().map(|s| 1.0 / s).collect();
    let n = tape.steps.len();
    let mut g_feature = vec![DVector::zeros(d); n];
    let mut g_map: Vec<DMatrix<f64>> = tape.encoders.iter().map(|e| DMatrix::zeros(d, e.out.low_level_map.ncols())).collect();
    let mut g_h_next = DVector::zeros(h);
    let mut g_c_next = DVector::zeros(h);
    let mut g_phi_next = vec![0.0; PHI_DIM];
    for t in (0..n).rev() {
        let step = &tape.steps[t];
        let g_phi: Vec<f64> = g_phis[t].iter().zip(&g_phi_next).map(|(a, b)| a + b).collect();
        let (g_h_ief, mut g_phi_prev) = ief_backward(params, &mut grad, &step.ief, &g_phi);
        let g_h = g_h_ief + &g_h_next;
        let (g_x, mut g_h_prev, g_c_prev) = lstm_backward(params, &mut grad, &step.lstm, &g_h, &g_c_next);
        g_feature[t] += g_x.rows(0, d);
        for (k, g) in g_phi_prev.iter_mut().enumerate() {
            *g += g_x[2 * d + k] * inv[k];
        }
        let g_context = g_x.rows(d, d).into_owned();
        let map = &tape.encoders[t].out.low_level_map;
        let (gm, gh) = attention_backward(params, &mut grad, &step.attention, map, &step.h_prev, &g_context);
        g_map[t] += gm;
        g_h_prev += gh;
        g_h_next = g_h_prev;
        g_c_next = g_c_prev;
        g_phi_next = g_phi_prev;
    }
    g_feature[0] += init_backward(params, &mut grad, &tape.init, &g_c_next, &g_h_next);
    for (t, enc) in tape.encoders.iter().enumerate() {
        encode_backward(params, &mut grad, enc, &g_feature[t], &g_map[t]);
    }
    grad
}

pub fn encode(image: &Image, params: &ModelParams) -> Result<EncodedFrame> {
    Ok(encode_tape(image, params)?.out)
}

/// Soft attention over annotation vectors: returns `(α, ẑ)`.
pub fn attention(map: &DMatrix<f64>, h_prev: &DVector<f64>, params: &ModelParams) -> Result<(Vec<f64>, DVector<f64>)> {
    let c = &params.config;
    if map.nrows() != c.feature_dim || h_prev.len() != c.hidden_dim {
        return Err(RecoverError::Shape(format!(
            "attention expects a {}-row map and a {}-wide state",
            c.feature_dim, c.hidden_dim
        )));
    }
    let t = attention_tape(map, h_prev, params);
    Ok((t.alpha.iter().copied().collect(), t.context))
}

pub fn lstm_step(x: &DVector<f64>, state: &RecurrentState, params: &ModelParams) -> Result<RecurrentState> {
    let c = &params.config;
    if x.len() != c.lstm_input() || state.h.len() != c.hidden_dim || state.c.len() != c.hidden_dim {
        return Err(RecoverError::Shape(format!(
            "LSTM expects input {} and state {}",
            c.lstm_input(),
            c.hidden_dim
        )));
    }
    Ok(lstm_tape(x, state, params).state)
}

pub fn init_states(first_feature: &DVector<f64>, params: &ModelParams) -> Result<RecurrentState> {
    if first_feature.len() != params.config.feature_dim {
        return Err(RecoverError::Shape(format!("feature has {} values", first_feature.len())));
    }
    Ok(init_tape(first_feature, params).state)
}

pub fn regress_ief(h: &DVector<f64>, phi_init: &RecoveryVector, params: &ModelParams, n_iter: usize) -> Result<RecoveryVector> {
    if n_iter == 0 || h.len() != params.config.hidden_dim {
        return Err(RecoverError::Shape(format!("IEF needs n_iter ≥ 1 and a {}-wide state", params.config.hidden_dim)));
    }
    phi_init.validate()?;
    RecoveryVector::from_raw(&ief_tape(h, &phi_init.to_raw(), params, n_iter).phi)
}

/// φ_1..φ_T for a clip of silhouettes.
pub fn recover_clip(frames: &[Image], params: &ModelParams) -> Result<Vec<RecoveryVector>> {
    clip_forward(frames, params)?.phis().iter().map(|p| RecoveryVector::from_raw(p)).collect()
}
