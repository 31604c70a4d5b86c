//! Hamiltonian geodesic integration and its exact discrete adjoint.
//!
//! State is a set of control points `q` with momenta `p` in the plane.
//! The flow integrates
//!
//! ```text
//!   qdot_a =  sum_b k(q_a, q_b) p_b
//!   pdot_a = -sum_b grad_{q_a} k(q_a, q_b) (p_a . p_b)
//! ```
//!
//! with `k(a, b) = exp(-|a - b|^2 / sigma^2)` using classical RK4 on
//! `tau in [0, 1]`. The Hamiltonian `H = 1/2 sum_{a,b} (p_a . p_b) k`
//! is conserved along the exact flow, so its drift measures integrator
//! error.
//!
//! For gradient-based matching the integrator records every RK4 stage
//! state together with its kernel values; [`Engine::backward`] then
//! propagates a cotangent at `tau = 1` back to `tau = 0` through the
//! exact discrete steps, so the resulting gradient matches finite
//! differences of the discrete objective to machine precision. The
//! matcher calls thousands of forward/backward sweeps, so the [`Engine`]
//! owns every buffer it needs and the hot loops allocate nothing.

use super::kernel::kernel_exp;
use crate::error::{Error, Result};
use crate::vec2::Vec2;

/// Right-hand side of the Hamiltonian system, exploiting the pair
/// symmetry (kernel symmetric, difference vector antisymmetric).
///
/// `ktri` must hold `n (n - 1) / 2` slots; the upper-triangular kernel
/// values land there (and feed the adjoint sweep when the caller is
/// taping). Kernels are evaluated row by row in a tight pass that the
/// compiler can vectorize before the scalar accumulation pass.
fn rhs(q: &[Vec2], p: &[Vec2], inv_s2: f64, qdot: &mut [Vec2], pdot: &mut [Vec2], ktri: &mut [f64]) {
    let n = q.len();
    debug_assert_eq!(ktri.len(), n * (n - 1) / 2);
    for i in 0..n {
        qdot[i] = p[i]; // diagonal term k(q_i, q_i) = 1
        pdot[i] = Vec2::ZERO;
    }
    let mut idx = 0;
    for a in 0..n {
        let (qa, pa) = (q[a], p[a]);
        let row = &mut ktri[idx..idx + (n - a - 1)];
        for (off, k_slot) in row.iter_mut().enumerate() {
            let r = qa - q[a + 1 + off];
            *k_slot = kernel_exp(-r.norm_sq() * inv_s2);
        }
        let mut acc_q = Vec2::ZERO;
        let mut acc_p = Vec2::ZERO;
        for (off, &k) in row.iter().enumerate() {
            if k == 0.0 {
                continue;
            }
            let b = a + 1 + off;
            let r = qa - q[b];
            let pb = p[b];
            acc_q += k * pb;
            qdot[b] += k * pa;
            let f = (2.0 * inv_s2 * pa.dot(pb) * k) * r;
            acc_p += f;
            pdot[b] -= f;
        }
        qdot[a] += acc_q;
        pdot[a] += acc_p;
        idx += n - a - 1;
    }
}

/// Vector-Jacobian product of the right-hand side: accumulates
/// `(qbar, pbar) = J(q, p)^T (u, w)` from kernel values recorded in the
/// forward pass.
#[allow(clippy::too_many_arguments)]
fn rhs_vjp(
    q: &[Vec2],
    p: &[Vec2],
    inv_s2: f64,
    ktri: &[f64],
    u: &[Vec2],
    w: &[Vec2],
    qbar: &mut [Vec2],
    pbar: &mut [Vec2],
) {
    let n = q.len();
    for i in 0..n {
        qbar[i] = Vec2::ZERO;
        pbar[i] = u[i]; // diagonal of the qdot block
    }
    let mut idx = 0;
    for a in 0..n {
        for b in a + 1..n {
            let k = ktri[idx];
            idx += 1;
            if k == 0.0 {
                continue;
            }
            let r = q[a] - q[b];
            let s = p[a].dot(p[b]);
            let du = u[a].dot(p[b]) + u[b].dot(p[a]);
            let dw = w[a] - w[b];
            let wr = dw.dot(r);
            let g = (-2.0 * inv_s2 * du) * (k * r)
                + (2.0 * inv_s2 * s * k) * dw
                + (-4.0 * inv_s2 * inv_s2 * s * k * wr) * r;
            qbar[a] += g;
            qbar[b] -= g;
            pbar[a] += k * u[b] + (2.0 * inv_s2 * k * wr) * p[b];
            pbar[b] += k * u[a] + (2.0 * inv_s2 * k * wr) * p[a];
        }
    }
}

/// Recorded forward pass: all RK4 stage states plus their kernel values.
pub struct TapeStorage {
    n: usize,
    n_steps: usize,
    n_pairs: usize,
    /// `n_steps * 4 * n` stage positions and momenta.
    q: Vec<Vec2>,
    p: Vec<Vec2>,
    /// `n_steps * 4 * n_pairs` kernel values.
    k: Vec<f64>,
    final_q: Vec<Vec2>,
    final_p: Vec<Vec2>,
}

impl TapeStorage {
    pub fn new(n: usize, n_steps: usize) -> Self {
        let n_pairs = n * (n - 1) / 2;
        TapeStorage {
            n,
            n_steps,
            n_pairs,
            q: vec![Vec2::ZERO; n_steps * 4 * n],
            p: vec![Vec2::ZERO; n_steps * 4 * n],
            k: vec![0.0; n_steps * 4 * n_pairs],
            final_q: vec![Vec2::ZERO; n],
            final_p: vec![Vec2::ZERO; n],
        }
    }

    pub fn final_q(&self) -> &[Vec2] {
        &self.final_q
    }

    fn stage_range(&self, step: usize, slot: usize) -> std::ops::Range<usize> {
        let at = (step * 4 + slot) * self.n;
        at..at + self.n
    }

    fn kernel_range(&self, step: usize, slot: usize) -> std::ops::Range<usize> {
        let at = (step * 4 + slot) * self.n_pairs;
        at..at + self.n_pairs
    }

    /// Mutable view of one step's recording region.
    fn step_view(&mut self, step: usize) -> StepTape<'_> {
        let n = self.n;
        let np = self.n_pairs;
        let q = &mut self.q[step * 4 * n..(step + 1) * 4 * n];
        let p = &mut self.p[step * 4 * n..(step + 1) * 4 * n];
        let ks = &mut self.k[step * 4 * np..(step + 1) * 4 * np];
        let (k0, rest) = ks.split_at_mut(np);
        let (k1, rest) = rest.split_at_mut(np);
        let (k2, k3) = rest.split_at_mut(np);
        StepTape {
            q,
            p,
            k: [k0, k1, k2, k3],
            n,
        }
    }
}

/// One step's slice of the tape, handed to the integrator while it
/// records.
struct StepTape<'t> {
    q: &'t mut [Vec2],
    p: &'t mut [Vec2],
    k: [&'t mut [f64]; 4],
    n: usize,
}

/// Preallocated integrator for one problem size.
pub struct Engine {
    n: usize,
    n_steps: usize,
    h: f64,
    inv_s2: f64,
    // stage state scratch (s1, s2, s3; s0 is the caller's input)
    sq: [Vec<Vec2>; 3],
    sp: [Vec<Vec2>; 3],
    // rhs evaluations k1..k4
    kq: [Vec<Vec2>; 4],
    kp: [Vec<Vec2>; 4],
    // kernel scratch for untaped evaluations
    kpair: Vec<f64>,
    // adjoint scratch
    bar_q: Vec<Vec2>,
    bar_p: Vec<Vec2>,
    acc_q: Vec<Vec2>,
    acc_p: Vec<Vec2>,
    tmp_q: Vec<Vec2>,
    tmp_p: Vec<Vec2>,
    kb_q: [Vec<Vec2>; 4],
    kb_p: [Vec<Vec2>; 4],
}

impl Engine {
    pub fn new(n: usize, sigma_v: f64, n_steps: usize) -> Engine {
        let z = || vec![Vec2::ZERO; n];
        Engine {
            n,
            n_steps,
            h: 1.0 / n_steps as f64,
            inv_s2: 1.0 / (sigma_v * sigma_v),
            sq: [z(), z(), z()],
            sp: [z(), z(), z()],
            kq: [z(), z(), z(), z()],
            kp: [z(), z(), z(), z()],
            kpair: vec![0.0; n * (n - 1) / 2],
            bar_q: z(),
            bar_p: z(),
            acc_q: z(),
            acc_p: z(),
            tmp_q: z(),
            tmp_p: z(),
            kb_q: [z(), z(), z(), z()],
            kb_p: [z(), z(), z(), z()],
        }
    }

    /// One RK4 step from (q, p) into (q_out, p_out), optionally
    /// recording the stage states and kernels into a tape view.
    fn step(
        &mut self,
        q: &[Vec2],
        p: &[Vec2],
        q_out: &mut [Vec2],
        p_out: &mut [Vec2],
        mut tape: Option<StepTape<'_>>,
    ) {
        let n = self.n;
        let h = self.h;
        for slot in 0..4 {
            if let Some(t) = &mut tape {
                let r = slot * t.n..(slot + 1) * t.n;
                if slot == 0 {
                    t.q[r.clone()].copy_from_slice(q);
                    t.p[r].copy_from_slice(p);
                } else {
                    t.q[r.clone()].copy_from_slice(&self.sq[slot - 1]);
                    t.p[r].copy_from_slice(&self.sp[slot - 1]);
                }
            }
            {
                let inv = self.inv_s2;
                let kt: &mut [f64] = match &mut tape {
                    Some(t) => &mut *t.k[slot],
                    None => &mut self.kpair,
                };
                if slot == 0 {
                    let (kq, kp) = (&mut self.kq, &mut self.kp);
                    rhs(q, p, inv, &mut kq[0], &mut kp[0], kt);
                } else {
                    let (sq, sp) = (&self.sq, &self.sp);
                    let (kq, kp) = (&mut self.kq, &mut self.kp);
                    rhs(
                        &sq[slot - 1],
                        &sp[slot - 1],
                        inv,
                        &mut kq[slot],
                        &mut kp[slot],
                        kt,
                    );
                }
            }
            if slot < 3 {
                let sh = if slot == 2 { h } else { h / 2.0 };
                for i in 0..n {
                    self.sq[slot][i] = q[i] + sh * self.kq[slot][i];
                    self.sp[slot][i] = p[i] + sh * self.kp[slot][i];
                }
            }
        }
        for i in 0..n {
            q_out[i] = q[i]
                + (h / 6.0)
                    * (self.kq[0][i] + 2.0 * self.kq[1][i] + 2.0 * self.kq[2][i] + self.kq[3][i]);
            p_out[i] = p[i]
                + (h / 6.0)
                    * (self.kp[0][i] + 2.0 * self.kp[1][i] + 2.0 * self.kp[2][i] + self.kp[3][i]);
        }
    }

    /// Integrate to `tau = 1`, writing the endpoint into the tape's
    /// final-state buffers and recording every stage.
    pub fn forward_tape(&mut self, q0: &[Vec2], p0: &[Vec2], tape: &mut TapeStorage) -> Result<()> {
        assert_eq!(q0.len(), self.n);
        assert_eq!(tape.n, self.n);
        assert_eq!(tape.n_steps, self.n_steps);
        let mut cur_q = std::mem::take(&mut self.tmp_q);
        let mut cur_p = std::mem::take(&mut self.tmp_p);
        let mut out_q = std::mem::take(&mut tape.final_q);
        let mut out_p = std::mem::take(&mut tape.final_p);
        cur_q.clear();
        cur_q.extend_from_slice(q0);
        cur_p.clear();
        cur_p.extend_from_slice(p0);
        out_q.resize(self.n, Vec2::ZERO);
        out_p.resize(self.n, Vec2::ZERO);
        let mut failed = None;
        for step in 0..self.n_steps {
            let view = tape.step_view(step);
            self.step(&cur_q, &cur_p, &mut out_q, &mut out_p, Some(view));
            std::mem::swap(&mut cur_q, &mut out_q);
            std::mem::swap(&mut cur_p, &mut out_p);
            if !state_finite(&cur_q, &cur_p) {
                failed = Some(step);
                break;
            }
        }
        tape.final_q = cur_q;
        tape.final_p = cur_p;
        self.tmp_q = out_q;
        self.tmp_p = out_p;
        match failed {
            Some(step) => Err(Error::Divergence {
                step,
                context: "non-finite state during geodesic shooting".to_string(),
            }),
            None => Ok(()),
        }
    }

    /// Integrate to `tau = 1` without taping; writes the endpoint into
    /// the provided buffers.
    pub fn forward_final(
        &mut self,
        q0: &[Vec2],
        p0: &[Vec2],
        q_out: &mut Vec<Vec2>,
        p_out: &mut Vec<Vec2>,
    ) -> Result<()> {
        let mut cur_q = std::mem::take(&mut self.tmp_q);
        let mut cur_p = std::mem::take(&mut self.tmp_p);
        cur_q.clear();
        cur_q.extend_from_slice(q0);
        cur_p.clear();
        cur_p.extend_from_slice(p0);
        q_out.resize(self.n, Vec2::ZERO);
        p_out.resize(self.n, Vec2::ZERO);
        let mut failed = None;
        for step in 0..self.n_steps {
            self.step(&cur_q, &cur_p, q_out, p_out, None);
            std::mem::swap(&mut cur_q, &mut *q_out);
            std::mem::swap(&mut cur_p, &mut *p_out);
            if !state_finite(&cur_q, &cur_p) {
                failed = Some(step);
                break;
            }
        }
        // the latest state sits in cur_* after the swap
        std::mem::swap(q_out, &mut cur_q);
        std::mem::swap(p_out, &mut cur_p);
        self.tmp_q = cur_q;
        self.tmp_p = cur_p;
        match failed {
            Some(step) => Err(Error::Divergence {
                step,
                context: "non-finite state during geodesic shooting".to_string(),
            }),
            None => Ok(()),
        }
    }

    /// Pull a cotangent on the final positions back to `tau = 0`.
    ///
    /// The cotangent against the final momenta is zero in the matching
    /// objective. Outputs land in `qbar`/`pbar`.
    pub fn backward(
        &mut self,
        tape: &TapeStorage,
        u1: &[Vec2],
        qbar: &mut Vec<Vec2>,
        pbar: &mut Vec<Vec2>,
    ) {
        let n = self.n;
        let h = self.h;
        self.bar_q.copy_from_slice(u1);
        for v in self.bar_p.iter_mut() {
            *v = Vec2::ZERO;
        }
        for step in (0..tape.n_steps).rev() {
            // out = s0 + h/6 (k1 + 2 k2 + 2 k3 + k4)
            for i in 0..n {
                let bq = self.bar_q[i];
                let bp = self.bar_p[i];
                self.kb_q[0][i] = (h / 6.0) * bq;
                self.kb_p[0][i] = (h / 6.0) * bp;
                self.kb_q[1][i] = (h / 3.0) * bq;
                self.kb_p[1][i] = (h / 3.0) * bp;
                self.kb_q[2][i] = self.kb_q[1][i];
                self.kb_p[2][i] = self.kb_p[1][i];
                self.kb_q[3][i] = self.kb_q[0][i];
                self.kb_p[3][i] = self.kb_p[0][i];
                self.acc_q[i] = bq;
                self.acc_p[i] = bp;
            }
            // k4 = f(s3), s3 = s0 + h k3
            self.stage_vjp(tape, step, 3);
            for i in 0..n {
                self.acc_q[i] += self.tmp_q[i];
                self.acc_p[i] += self.tmp_p[i];
                self.kb_q[2][i] += h * self.tmp_q[i];
                self.kb_p[2][i] += h * self.tmp_p[i];
            }
            // k3 = f(s2), s2 = s0 + h/2 k2
            self.stage_vjp(tape, step, 2);
            for i in 0..n {
                self.acc_q[i] += self.tmp_q[i];
                self.acc_p[i] += self.tmp_p[i];
                self.kb_q[1][i] += (h / 2.0) * self.tmp_q[i];
                self.kb_p[1][i] += (h / 2.0) * self.tmp_p[i];
            }
            // k2 = f(s1), s1 = s0 + h/2 k1
            self.stage_vjp(tape, step, 1);
            for i in 0..n {
                self.acc_q[i] += self.tmp_q[i];
                self.acc_p[i] += self.tmp_p[i];
                self.kb_q[0][i] += (h / 2.0) * self.tmp_q[i];
                self.kb_p[0][i] += (h / 2.0) * self.tmp_p[i];
            }
            // k1 = f(s0)
            self.stage_vjp(tape, step, 0);
            for i in 0..n {
                self.bar_q[i] = self.acc_q[i] + self.tmp_q[i];
                self.bar_p[i] = self.acc_p[i] + self.tmp_p[i];
            }
        }
        qbar.clear();
        qbar.extend_from_slice(&self.bar_q);
        pbar.clear();
        pbar.extend_from_slice(&self.bar_p);
    }

    /// VJP of `f` at tape stage (step, slot) against cotangent
    /// `kb[slot]`, into `tmp`.
    fn stage_vjp(&mut self, tape: &TapeStorage, step: usize, slot: usize) {
        let sr = tape.stage_range(step, slot);
        let kr = tape.kernel_range(step, slot);
        rhs_vjp(
            &tape.q[sr.clone()],
            &tape.p[sr],
            self.inv_s2,
            &tape.k[kr],
            &self.kb_q[slot],
            &self.kb_p[slot],
            &mut self.tmp_q,
            &mut self.tmp_p,
        );
    }
}

fn state_finite(q: &[Vec2], p: &[Vec2]) -> bool {
    q.iter().all(|v| v.is_finite()) && p.iter().all(|v| v.is_finite())
}

/// Gaussian kernel `exp(-|a-b|^2 / sigma^2)`.
pub fn gauss_kernel(a: Vec2, b: Vec2, sigma: f64) -> f64 {
    let d = a - b;
    kernel_exp(-d.norm_sq() / (sigma * sigma))
}

/// Kernel Hamiltonian `H(q, p) = 1/2 sum_{a,b} (p_a . p_b) k(q_a, q_b)`.
pub fn hamiltonian(q: &[Vec2], p: &[Vec2], sigma_v: f64) -> f64 {
    assert_eq!(q.len(), p.len(), "q and p must have equal length");
    let n = q.len();
    let inv_s2 = 1.0 / (sigma_v * sigma_v);
    let mut h = 0.0;
    for a in 0..n {
        h += 0.5 * p[a].norm_sq();
        for b in a + 1..n {
            let k = kernel_exp(-(q[a] - q[b]).norm_sq() * inv_s2);
            h += p[a].dot(p[b]) * k;
        }
    }
    h
}

/// Geodesic trajectory sampled at step boundaries.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `n_steps + 1` frames of control-point positions.
    pub q_frames: Vec<Vec<Vec2>>,
    /// `n_steps + 1` frames of momenta.
    pub p_frames: Vec<Vec<Vec2>>,
}

impl Trajectory {
    pub fn final_q(&self) -> &[Vec2] {
        self.q_frames.last().expect("trajectory has frames")
    }
}

fn validate_shoot_args(q0: &[Vec2], p0: &[Vec2], sigma_v: f64, n_steps: usize) -> Result<()> {
    if q0.len() != p0.len() {
        return Err(Error::invalid("q0 and p0 must have equal length"));
    }
    if q0.is_empty() {
        return Err(Error::invalid("empty control point set"));
    }
    if !(sigma_v > 0.0) || n_steps == 0 {
        return Err(Error::invalid("sigma_v must be positive and n_steps nonzero"));
    }
    Ok(())
}

/// Integrate the geodesic equations from `tau = 0` to `tau = 1`,
/// keeping every frame.
pub fn shoot(q0: &[Vec2], p0: &[Vec2], sigma_v: f64, n_steps: usize) -> Result<Trajectory> {
    validate_shoot_args(q0, p0, sigma_v, n_steps)?;
    let mut engine = Engine::new(q0.len(), sigma_v, n_steps);
    let mut q_frames = Vec::with_capacity(n_steps + 1);
    let mut p_frames = Vec::with_capacity(n_steps + 1);
    q_frames.push(q0.to_vec());
    p_frames.push(p0.to_vec());
    let mut q = q0.to_vec();
    let mut p = p0.to_vec();
    let mut q_next = vec![Vec2::ZERO; q0.len()];
    let mut p_next = vec![Vec2::ZERO; q0.len()];
    for step in 0..n_steps {
        engine.step(&q, &p, &mut q_next, &mut p_next, None);
        if !state_finite(&q_next, &p_next) {
            return Err(Error::Divergence {
                step,
                context: "non-finite state during geodesic shooting".to_string(),
            });
        }
        std::mem::swap(&mut q, &mut q_next);
        std::mem::swap(&mut p, &mut p_next);
        q_frames.push(q.clone());
        p_frames.push(p.clone());
    }
    Ok(Trajectory { q_frames, p_frames })
}

/// A recorded forward pass with an allocating adjoint entry point.
pub struct Tape {
    storage: TapeStorage,
    sigma_v: f64,
}

impl Tape {
    /// Endpoint positions at `tau = 1`.
    pub fn final_q(&self) -> &[Vec2] {
        self.storage.final_q()
    }

    /// Pull a cotangent on the final positions back to `(q0, p0)`.
    pub fn backward(&self, u1: &[Vec2]) -> (Vec<Vec2>, Vec<Vec2>) {
        let mut engine = Engine::new(self.storage.n, self.sigma_v, self.storage.n_steps);
        let mut qbar = Vec::new();
        let mut pbar = Vec::new();
        engine.backward(&self.storage, u1, &mut qbar, &mut pbar);
        (qbar, pbar)
    }
}

/// Integrate while recording a tape for the adjoint sweep.
pub fn shoot_with_tape(q0: &[Vec2], p0: &[Vec2], sigma_v: f64, n_steps: usize) -> Result<Tape> {
    validate_shoot_args(q0, p0, sigma_v, n_steps)?;
    let mut engine = Engine::new(q0.len(), sigma_v, n_steps);
    let mut storage = TapeStorage::new(q0.len(), n_steps);
    engine.forward_tape(q0, p0, &mut storage)?;
    Ok(Tape { storage, sigma_v })
}

/// Integrate control points while carrying passive points through the
/// same velocity field.
///
/// Passive points do not influence the flow; each is advected by
/// `xdot = sum_b k(x, q_b) p_b`. Used to deform a full curve whose
/// momenta live on a strided subset of its vertices.
pub fn shoot_with_carried(
    q0: &[Vec2],
    p0: &[Vec2],
    carried: &[Vec2],
    sigma_v: f64,
    n_steps: usize,
) -> Result<(Trajectory, Vec<Vec2>)> {
    validate_shoot_args(q0, p0, sigma_v, n_steps)?;
    let inv_s2 = 1.0 / (sigma_v * sigma_v);
    let h = 1.0 / n_steps as f64;
    let n = q0.len();
    let m = carried.len();
    let mut q = q0.to_vec();
    let mut p = p0.to_vec();
    let mut x = carried.to_vec();
    let mut q_frames = vec![q.clone()];
    let mut p_frames = vec![p.clone()];

    let velocity = |q: &[Vec2], p: &[Vec2], pts: &[Vec2], out: &mut Vec<Vec2>| {
        out.clear();
        for &pt in pts {
            let mut v = Vec2::ZERO;
            for b in 0..n {
                let k = kernel_exp(-(pt - q[b]).norm_sq() * inv_s2);
                v += k * p[b];
            }
            out.push(v);
        }
    };

    let mut qs = vec![Vec2::ZERO; n];
    let mut ps = vec![Vec2::ZERO; n];
    let mut qdot = vec![Vec2::ZERO; n];
    let mut pdot = vec![Vec2::ZERO; n];
    let mut kpair = vec![0.0; n * (n - 1) / 2];
    let mut stage_q: [Vec<Vec2>; 4] = std::array::from_fn(|_| vec![Vec2::ZERO; n]);
    let mut stage_p: [Vec<Vec2>; 4] = std::array::from_fn(|_| vec![Vec2::ZERO; n]);
    let mut v1 = Vec::with_capacity(m);
    let mut v2 = Vec::with_capacity(m);
    let mut v3 = Vec::with_capacity(m);
    let mut v4 = Vec::with_capacity(m);
    let mut xs = vec![Vec2::ZERO; m];
    for step in 0..n_steps {
        // control-point stages, recomputed so passengers ride the same
        // stage fields
        stage_q[0].copy_from_slice(&q);
        stage_p[0].copy_from_slice(&p);
        let mut acc_q: Vec<Vec2> = q.clone();
        let mut acc_p: Vec<Vec2> = p.clone();
        for (slot, weight) in [(0usize, h / 6.0), (1, h / 3.0), (2, h / 3.0), (3, h / 6.0)] {
            rhs(&stage_q[slot], &stage_p[slot], inv_s2, &mut qdot, &mut pdot, &mut kpair);
            // advect passengers with this stage's field
            {
                let vs = match slot {
                    0 => &mut v1,
                    1 => &mut v2,
                    2 => &mut v3,
                    _ => &mut v4,
                };
                velocity(
                    &stage_q[slot],
                    &stage_p[slot],
                    if slot == 0 { &x } else { &xs },
                    vs,
                );
            }
            if slot < 3 {
                let stage_h = if slot == 2 { h } else { h / 2.0 };
                for i in 0..n {
                    qs[i] = q[i] + stage_h * qdot[i];
                    ps[i] = p[i] + stage_h * pdot[i];
                }
                stage_q[slot + 1].copy_from_slice(&qs);
                stage_p[slot + 1].copy_from_slice(&ps);
                let vcur: &[Vec2] = match slot {
                    0 => &v1,
                    1 => &v2,
                    _ => &v3,
                };
                for i in 0..m {
                    xs[i] = x[i] + stage_h * vcur[i];
                }
            }
            for i in 0..n {
                acc_q[i] += weight * qdot[i];
                acc_p[i] += weight * pdot[i];
            }
        }
        for i in 0..m {
            x[i] += (h / 6.0) * (v1[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]);
        }
        q = acc_q;
        p = acc_p;
        if !state_finite(&q, &p) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step,
                context: "non-finite state while advecting carried points".to_string(),
            });
        }
        q_frames.push(q.clone());
        p_frames.push(p.clone());
    }
    Ok((Trajectory { q_frames, p_frames }, x))
}
