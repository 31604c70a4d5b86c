//! Currents kernel metric between oriented polylines.
//!
//! A polyline is represented by its segment centers and (unnormalized)
//! tangent vectors; two curves are compared through
//!
//! ```text
//!   <A, B> = sum_{f,g} k(c_f^A, c_g^B; sigma_w) (t_f^A . t_g^B)
//!   dist(A, B) = <A,A> - 2 <A,B> + <B,B>
//! ```
//!
//! which is correspondence-free and smooth in the vertex positions.
//! Zero-length segments carry no geometric content and are dropped.

use super::kernel::kernel_exp;
use crate::error::{Error, Result};
use crate::vec2::Vec2;

struct Segments {
    centers: Vec<Vec2>,
    tangents: Vec<Vec2>,
}

fn segments(poly: &[Vec2]) -> Result<Segments> {
    if poly.len() < 2 {
        return Err(Error::invalid("polyline needs at least 2 vertices"));
    }
    let mut centers = Vec::with_capacity(poly.len() - 1);
    let mut tangents = Vec::with_capacity(poly.len() - 1);
    for i in 0..poly.len() - 1 {
        let t = poly[i + 1] - poly[i];
        if t.norm_sq() == 0.0 {
            continue;
        }
        centers.push(0.5 * (poly[i] + poly[i + 1]));
        tangents.push(t);
    }
    if centers.is_empty() {
        return Err(Error::invalid(
            "polyline is fully degenerate (all segments have zero length)",
        ));
    }
    Ok(Segments { centers, tangents })
}

fn inner(a: &Segments, b: &Segments, inv_s2: f64) -> f64 {
    let mut acc = 0.0;
    for f in 0..a.centers.len() {
        let (cf, tf) = (a.centers[f], a.tangents[f]);
        for g in 0..b.centers.len() {
            let k = kernel_exp(-(cf - b.centers[g]).norm_sq() * inv_s2);
            acc += k * tf.dot(b.tangents[g]);
        }
    }
    acc
}

/// Squared currents distance between two polylines.
pub fn currents_distance(curve_a: &[Vec2], curve_b: &[Vec2], sigma_w: f64) -> Result<f64> {
    if !(sigma_w > 0.0) {
        return Err(Error::invalid("sigma_w must be positive"));
    }
    let a = segments(curve_a)?;
    let b = segments(curve_b)?;
    let inv_s2 = 1.0 / (sigma_w * sigma_w);
    let d = inner(&a, &a, inv_s2) - 2.0 * inner(&a, &b, inv_s2) + inner(&b, &b, inv_s2);
    Ok(d.max(0.0))
}

/// Precomputed target-side currents data for repeated evaluations
/// against one fixed target.
pub(crate) struct TargetAttachment {
    target: Segments,
    self_inner: f64,
    inv_s2: f64,
}

/// Reusable buffers for the deformed-curve side.
#[derive(Default)]
pub(crate) struct AttachmentWorkspace {
    centers: Vec<Vec2>,
    tangents: Vec<Vec2>,
    first_vertex: Vec<usize>,
    cbar: Vec<Vec2>,
    tbar: Vec<Vec2>,
}

impl AttachmentWorkspace {
    fn load(&mut self, poly: &[Vec2]) -> Result<()> {
        if poly.len() < 2 {
            return Err(Error::invalid("polyline needs at least 2 vertices"));
        }
        self.centers.clear();
        self.tangents.clear();
        self.first_vertex.clear();
        for i in 0..poly.len() - 1 {
            let t = poly[i + 1] - poly[i];
            if t.norm_sq() == 0.0 {
                continue;
            }
            self.centers.push(0.5 * (poly[i] + poly[i + 1]));
            self.tangents.push(t);
            self.first_vertex.push(i);
        }
        if self.centers.is_empty() {
            return Err(Error::invalid(
                "polyline is fully degenerate (all segments have zero length)",
            ));
        }
        Ok(())
    }
}

impl TargetAttachment {
    pub fn new(target: &[Vec2], sigma_w: f64) -> Result<Self> {
        if !(sigma_w > 0.0) {
            return Err(Error::invalid("sigma_w must be positive"));
        }
        let seg = segments(target)?;
        let inv_s2 = 1.0 / (sigma_w * sigma_w);
        let self_inner = inner(&seg, &seg, inv_s2);
        Ok(TargetAttachment {
            target: seg,
            self_inner,
            inv_s2,
        })
    }

    /// Squared currents distance from `x` to the fixed target.
    pub fn distance(&self, x: &[Vec2], ws: &mut AttachmentWorkspace) -> Result<f64> {
        ws.load(x)?;
        let inv_s2 = self.inv_s2;
        let mut aa = 0.0;
        let mut ab = 0.0;
        for f in 0..ws.centers.len() {
            let (cf, tf) = (ws.centers[f], ws.tangents[f]);
            aa += tf.norm_sq(); // g = f term, k = 1
            for g in f + 1..ws.centers.len() {
                let k = kernel_exp(-(cf - ws.centers[g]).norm_sq() * inv_s2);
                aa += 2.0 * k * tf.dot(ws.tangents[g]);
            }
            for g in 0..self.target.centers.len() {
                let k = kernel_exp(-(cf - self.target.centers[g]).norm_sq() * inv_s2);
                ab += k * tf.dot(self.target.tangents[g]);
            }
        }
        Ok((aa - 2.0 * ab + self.self_inner).max(0.0))
    }

    /// Gradient of the distance with respect to the vertices of `x`.
    pub fn grad_into(
        &self,
        x: &[Vec2],
        ws: &mut AttachmentWorkspace,
        grad: &mut Vec<Vec2>,
    ) -> Result<()> {
        ws.load(x)?;
        let inv_s2 = self.inv_s2;
        let na = ws.centers.len();
        ws.cbar.clear();
        ws.cbar.resize(na, Vec2::ZERO);
        ws.tbar.clear();
        ws.tbar.resize(na, Vec2::ZERO);
        for f in 0..na {
            let (cf, tf) = (ws.centers[f], ws.tangents[f]);
            // <A,A> term (f appears in both slots)
            for g in 0..na {
                let r = cf - ws.centers[g];
                let k = kernel_exp(-r.norm_sq() * inv_s2);
                ws.cbar[f] += (-4.0 * inv_s2 * tf.dot(ws.tangents[g]) * k) * r;
                ws.tbar[f] += 2.0 * k * ws.tangents[g];
            }
            // -2 <A,B> term
            for g in 0..self.target.centers.len() {
                let r = cf - self.target.centers[g];
                let k = kernel_exp(-r.norm_sq() * inv_s2);
                ws.cbar[f] += (4.0 * inv_s2 * tf.dot(self.target.tangents[g]) * k) * r;
                ws.tbar[f] -= 2.0 * k * self.target.tangents[g];
            }
        }
        grad.clear();
        grad.resize(x.len(), Vec2::ZERO);
        for f in 0..na {
            let v = ws.first_vertex[f];
            grad[v] += 0.5 * ws.cbar[f] - ws.tbar[f];
            grad[v + 1] += 0.5 * ws.cbar[f] + ws.tbar[f];
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    #[test]
    fn identical_polylines_have_zero_distance() {
        let poly = vec![v(0.0, 0.0), v(0.5, 0.2), v(1.0, -0.1), v(1.5, 0.4)];
        let d = currents_distance(&poly, &poly, 0.3).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn orthogonal_tangents_decouple() {
        // single segments with orthogonal tangents: <A,B> = 0
        let a = vec![v(0.0, 0.0), v(1.0, 0.0)];
        let b = vec![v(0.0, 0.0), v(0.0, 1.0)];
        let sigma = 0.5;
        let d = currents_distance(&a, &b, sigma).unwrap();
        // |A|^2 = |B|^2 = 1 (self kernel of a single segment is 1)
        assert!((d - 2.0).abs() < 1e-14);
    }

    #[test]
    fn coincident_centers_hand_expansion() {
        // tangents (1,0) and (2,0) sharing a center: 1 - 2*2 + 4 = 1
        let a = vec![v(-0.5, 0.0), v(0.5, 0.0)];
        let b = vec![v(-1.0, 0.0), v(1.0, 0.0)];
        let d = currents_distance(&a, &b, 1e6).unwrap();
        // huge sigma makes every kernel ~1
        assert!((d - 1.0).abs() < 1e-9, "got {d}");
    }

    #[test]
    fn zero_length_segments_are_dropped() {
        let a = vec![v(0.0, 0.0), v(0.0, 0.0), v(1.0, 0.0)];
        let b = vec![v(0.0, 0.0), v(1.0, 0.0)];
        let d = currents_distance(&a, &b, 0.4).unwrap();
        assert!(d.abs() < 1e-14);
        let degenerate = vec![v(0.3, 0.3), v(0.3, 0.3), v(0.3, 0.3)];
        assert!(currents_distance(&degenerate, &b, 0.4).is_err());
    }

    #[test]
    fn distance_is_nonnegative_on_random_pairs() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _ in 0..25 {
            let a: Vec<Vec2> = (0..6).map(|i| v(i as f64 * 0.2 + 0.05 * next(), next())).collect();
            let b: Vec<Vec2> = (0..9).map(|i| v(i as f64 * 0.15 + 0.05 * next(), next())).collect();
            let d = currents_distance(&a, &b, 0.3).unwrap();
            assert!(d >= 0.0);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = vec![v(0.0, 0.05), v(0.3, 0.2), v(0.62, -0.1), v(0.9, 0.3)];
        let target = vec![v(0.0, 0.0), v(0.35, 0.1), v(0.6, 0.05), v(0.95, 0.2)];
        let sigma = 0.25;
        let attachment = TargetAttachment::new(&target, sigma).unwrap();
        let mut ws = AttachmentWorkspace::default();
        let mut grad = Vec::new();
        attachment.grad_into(&x, &mut ws, &mut grad).unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            for dim in 0..2 {
                let mut plus = x.clone();
                let mut minus = x.clone();
                if dim == 0 {
                    plus[i].x += h;
                    minus[i].x -= h;
                } else {
                    plus[i].y += h;
                    minus[i].y -= h;
                }
                let fd = (currents_distance(&plus, &target, sigma).unwrap()
                    - currents_distance(&minus, &target, sigma).unwrap())
                    / (2.0 * h);
                let an = if dim == 0 { grad[i].x } else { grad[i].y };
                assert!(
                    (fd - an).abs() <= 1e-5 * fd.abs().max(1.0),
                    "vertex {i} dim {dim}: fd {fd} vs analytic {an}"
                );
            }
        }
    }
}
