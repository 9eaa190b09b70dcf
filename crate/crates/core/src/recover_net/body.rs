//! Metric joints as a differentiable function of `(θ, β)`.
//!
//! Skinning is linear in the per-joint transforms, so regressed joints reduce
//! to `J_q = Σ_i R_qi v_i + Σ_k [(A_k − I)·p_qk + m_qk·b_k]` with
//! `m_qk = Σ_i R_qi w_ik` and `p_qk = Σ_i R_qi w_ik v_i`. Both are
//! precomputed, with `p_qk` affine in β.

use crate::body_model::rotation::rodrigues_backward;
use crate::body_model::{rodrigues, BodyTemplate, SHAPE_DIM, THETA_DIM};
use nalgebra::{Matrix3, SMatrix, Vector3};

type Basis = SMatrix<f64, 3, SHAPE_DIM>;

struct Term {
    joint: usize,
    m: f64,
    p: Vector3<f64>,
    p_basis: Basis,
}

pub(crate) struct JointModel {
    parents: Vec<usize>,
    rest: Vec<Vector3<f64>>,
    rest_basis: Vec<Basis>,
    base: Vec<Vector3<f64>>,
    base_basis: Vec<Basis>,
    terms: Vec<Vec<Term>>,
}

pub(crate) struct JointTape {
    pub joints: Vec<Vector3<f64>>,
    theta: Vec<f64>,
    beta: [f64; SHAPE_DIM],
    rest: Vec<Vector3<f64>>,
    local: Vec<Matrix3<f64>>,
    rot: Vec<Matrix3<f64>>,
}

fn vertex_basis(t: &BodyTemplate, i: usize) -> Basis {
    Basis::from_fn(|c, k| t.shape_basis[(3 * i + c, k)])
}

fn apply(basis: &Basis, beta: &[f64; SHAPE_DIM]) -> Vector3<f64> {
    basis * nalgebra::SVector::<f64, SHAPE_DIM>::from_column_slice(beta)
}

fn accumulate_beta(g: &mut [f64; SHAPE_DIM], basis: &Basis, v: &Vector3<f64>) {
    let d = basis.transpose() * v;
    g.iter_mut().zip(d.iter()).for_each(|(a, b)| *a += b);
}

impl JointModel {
    pub fn new(t: &BodyTemplate) -> Self {
        let n = t.joint_count();
        let regress = |row: usize| {
            let mut v = Vector3::zeros();
            let mut b = Basis::zeros();
            for (i, &w) in t.joint_regressor.row(row).iter().enumerate() {
                if w != 0.0 {
                    v += t.rest_vertices[i] * w;
                    b += vertex_basis(t, i) * w;
                }
            }
            (v, b)
        };
        let (rest, rest_basis) = (0..n).map(regress).unzip();
        let (base, base_basis) = t.metric_joint_map.iter().map(|&q| regress(q)).unzip();
        let terms = t
            .metric_joint_map
            .iter()
            .map(|&q| {
                (0..n)
                    .filter_map(|k| {
                        let mut term = Term {
                            joint: k,
                            m: 0.0,
                            p: Vector3::zeros(),
                            p_basis: Basis::zeros(),
                        };
                        for (i, &r) in t.joint_regressor.row(q).iter().enumerate() {
                            let rw = r * t.skinning_weights[(i, k)];
                            if rw != 0.0 {
                                term.m += rw;
                                term.p += t.rest_vertices[i] * rw;
                                term.p_basis += vertex_basis(t, i) * rw;
                            }
                        }
                        (term.m != 0.0).then_some(term)
                    })
                    .collect()
            })
            .collect();
        Self {
            parents: t.parents.clone(),
            rest,
            rest_basis,
            base,
            base_basis,
            terms,
        }
    }

    pub fn forward(&self, theta: &[f64], beta: &[f64; SHAPE_DIM]) -> JointTape {
        debug_assert_eq!(theta.len(), THETA_DIM);
        let n = self.parents.len();
        let mut rest = Vec::with_capacity(n);
        let mut local = Vec::with_capacity(n);
        let mut rot: Vec<Matrix3<f64>> = Vec::with_capacity(n);
        let mut trans: Vec<Vector3<f64>> = Vec::with_capacity(n);
        for (j, &p) in self.parents.iter().enumerate() {
            let r = self.rest[j] + apply(&self.rest_basis[j], beta);
            let l = rodrigues(&Vector3::from_column_slice(&theta[3 * j..3 * j + 3]));
            let u = r - l * r;
            if p == j {
                rot.push(l);
                trans.push(u);
            } else {
                rot.push(rot[p] * l);
                trans.push(rot[p] * u + trans[p]);
            }
            rest.push(r);
            local.push(l);
        }
        let joints = self
            .terms
            .iter()
            .enumerate()
            .map(|(q, terms)| {
                let mut out = self.base[q] + apply(&self.base_basis[q], beta);
                for t in terms {
                    let p = t.p + apply(&t.p_basis, beta);
                    out += (rot[t.joint] - Matrix3::identity()) * p + trans[t.joint] * t.m;
                }
                out
            })
            .collect();
        JointTape {
            joints,
            theta: theta.to_vec(),
            beta: *beta,
            rest,
            local,
            rot,
        }
    }

    /// Gradients of a scalar with respect to `θ` and `β`, given its gradient
    /// with respect to each metric joint.
    pub fn backward(&self, tape: &JointTape, grad: &[Vector3<f64>]) -> (Vec<f64>, [f64; SHAPE_DIM]) {
        let n = self.parents.len();
        let mut g_rot = vec![Matrix3::zeros(); n];
        let mut g_trans = vec![Vector3::zeros(); n];
        let mut g_beta = [0.0; SHAPE_DIM];
        for (q, terms) in self.terms.iter().enumerate() {
            let g = grad[q];
            accumulate_beta(&mut g_beta, &self.base_basis[q], &g);
            for t in terms {
                let p = t.p + apply(&t.p_basis, &tape.beta);
                g_rot[t.joint] += g * p.transpose();
                g_trans[t.joint] += g * t.m;
                let gp = (tape.rot[t.joint] - Matrix3::identity()).transpose() * g;
                accumulate_beta(&mut g_beta, &t.p_basis, &gp);
            }
        }
        let mut g_theta = vec![0.0; THETA_DIM];
        for j in (0..n).rev() {
            let p = self.parents[j];
            let (l, r) = (tape.local[j], tape.rest[j]);
            let (mut g_local, g_u) = if p == j {
                (g_rot[j], g_trans[j])
            } else {
                let u = r - l * r;
                let parent_t = tape.rot[p].transpose();
                let (ga, gb) = (g_rot[j], g_trans[j]);
                g_rot[p] += ga * l.transpose() + gb * u.transpose();
                g_trans[p] += gb;
                (parent_t * ga, parent_t * gb)
            };
            g_local -= g_u * r.transpose();
            let g_rest = g_u - l.transpose() * g_u;
            accumulate_beta(&mut g_beta, &self.rest_basis[j], &g_rest);
            let omega = Vector3::from_column_slice(&tape.theta[3 * j..3 * j + 3]);
            let d = rodrigues_backward(&omega, &g_local);
            g_theta[3 * j..3 * j + 3].copy_from_slice(d.as_slice());
        }
        (g_theta, g_beta)
    }
}
