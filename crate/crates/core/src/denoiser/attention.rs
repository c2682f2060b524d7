#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{smooth_and_warp, CloudPair, FeatureNetwork, GThetaConfig, PositionalEncoding};
use crate::diffusion::{simple_loss_with_grad, FocalParams};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::matrixspace::{MatchMatrix, SinkhornTape};

/// Names of a layer's tensors, in storage order.
pub const TENSOR_NAMES: [&str; 9] = ["w_q", "w_k", "w_v", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2", "mlp_w3", "mlp_b3"];

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_K: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// One attention block: projections `W_q, W_k, W_v` (`d × d`) and a
/// three-layer MLP `2d → 2d → d → d` applied to `cat[q, message]`.
/// Biases are stored as column matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayer {
    pub w_q: DMatrix<f64>,
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
    pub mlp_w1: DMatrix<f64>,
    pub mlp_b1: DMatrix<f64>,
    pub mlp_w2: DMatrix<f64>,
    pub mlp_b2: DMatrix<f64>,
    pub mlp_w3: DMatrix<f64>,
    pub mlp_b3: DMatrix<f64>,
}

impl AttentionLayer {
    pub fn zeros(d: usize) -> Self {
        Self {
            w_q: DMatrix::zeros(d, d),
            w_k: DMatrix::zeros(d, d),
            w_v: DMatrix::zeros(d, d),
            mlp_w1: DMatrix::zeros(2 * d, 2 * d),
            mlp_b1: DMatrix::zeros(2 * d, 1),
            mlp_w2: DMatrix::zeros(d, 2 * d),
            mlp_b2: DMatrix::zeros(d, 1),
            mlp_w3: DMatrix::zeros(d, d),
            mlp_b3: DMatrix::zeros(d, 1),
        }
    }

    /// Weights drawn from `N(0, 1/fan_in)`, biases zero.
    fn random<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(d);
        for (k, t) in layer.tensors_mut().into_iter().enumerate() {
            if TENSOR_NAMES[k].contains("_b") {
                continue;
            }
            let std = 1.0 / (t.ncols() as f64).sqrt();
            t.iter_mut().for_each(|v| *v = std * rng.sample::<f64, _>(StandardNormal));
        }
        layer
    }

    pub fn tensors(&self) -> [&DMatrix<f64>; 9] {
        [
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.mlp_w1,
            &self.mlp_b1,
            &self.mlp_w2,
            &self.mlp_b2,
            &self.mlp_w3,
            &self.mlp_b3,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut DMatrix<f64>; 9] {
        [
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.mlp_w1,
            &mut self.mlp_b1,
            &mut self.mlp_w2,
            &mut self.mlp_b2,
            &mut self.mlp_w3,
            &mut self.mlp_b3,
        ]
    }
}

/// Parameters of the attention feature network. Even layers are
/// self-attention within each cloud, odd layers cross-attention between
/// them; both clouds share a layer's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub dim: usize,
    pub layers: Vec<AttentionLayer>,
    pub encoding: PositionalEncoding,
}

impl AttentionParams {
    pub fn random(dim: usize, layers: usize, encoding: PositionalEncoding, seed: u64) -> Result<Self> {
        if dim == 0 || encoding.dim != dim {
            return Err(Error::InvalidParameter {
                name: "dim",
                reason: "must be positive and match the positional encoding",
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            dim,
            layers: (0..layers).map(|_| AttentionLayer::random(dim, &mut rng)).collect(),
            encoding,
        })
    }

    /// Same shapes, all entries zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            dim: self.dim,
            layers: self.layers.iter().map(|_| AttentionLayer::zeros(self.dim)).collect(),
            encoding: self.encoding,
        }
    }

    /// Zeroes every MLP output layer, making the network the identity.
    pub fn with_zero_output(mut self) -> Self {
        for l in &mut self.layers {
            l.mlp_w3.fill(0.0);
            l.mlp_b3.fill(0.0);
        }
        self
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().flat_map(|l| l.tensors()).map(|t| t.len()).sum()
    }

    /// All entries in layer, tensor, column-major order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            for t in l.tensors() {
                out.extend_from_slice(t.as_slice());
            }
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::LengthMismatch {
                expected: self.num_params(),
                found: flat.len(),
            });
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let mut k = 0;
        for l in &mut self.layers {
            for t in l.tensors_mut() {
                let n = t.len();
                t.as_mut_slice().copy_from_slice(&flat[k..k + n]);
                k += n;
            }
        }
        Ok(())
    }

    pub fn is_cross(layer: usize) -> bool {
        layer % 2 == 1
    }
}

/// Intermediates of one attention block applied to one cloud.
#[derive(Debug, Clone)]
struct AttendCache {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    q: DMatrix<f64>,
    k: DMatrix<f64>,
    v: DMatrix<f64>,
    a: DMatrix<f64>,
    z0: DMatrix<f64>,
    pre1: DMatrix<f64>,
    h1: DMatrix<f64>,
    pre2: DMatrix<f64>,
    h2: DMatrix<f64>,
}

fn add_bias(m: &mut DMatrix<f64>, b: &DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        row += b.transpose();
    }
}

fn col_sums(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.ncols(), 1, |c, _| m.column(c).sum())
}

/// Update `MLP(cat[q, Σ_j α_ij v_j])` for queries `x` attending to `y`.
fn attend(
    layer: &AttentionLayer,
    x: &DMatrix<f64>,
    tx: &DMatrix<f64>,
    y: &DMatrix<f64>,
    ty: &DMatrix<f64>,
) -> (DMatrix<f64>, AttendCache) {
    let d = x.ncols();
    let q = (x * layer.w_q.transpose()).component_mul(tx);
    let k = (y * layer.w_k.transpose()).component_mul(ty);
    let v = y * layer.w_v.transpose();
    let mut a = (&q * k.transpose()) / (d as f64).sqrt();
    for mut row in a.row_iter_mut() {
        let top = row.max();
        row.iter_mut().for_each(|s| *s = (*s - top).exp());
        let total = row.sum();
        row /= total;
    }
    let message = &a * &v;
    let mut z0 = DMatrix::zeros(x.nrows(), 2 * d);
    z0.columns_mut(0, d).copy_from(&q);
    z0.columns_mut(d, d).copy_from(&message);
    let mut pre1 = &z0 * layer.mlp_w1.transpose();
    add_bias(&mut pre1, &layer.mlp_b1);
    let h1 = pre1.map(gelu);
    let mut pre2 = &h1 * layer.mlp_w2.transpose();
    add_bias(&mut pre2, &layer.mlp_b2);
    let h2 = pre2.map(gelu);
    let mut out = &h2 * layer.mlp_w3.transpose();
    add_bias(&mut out, &layer.mlp_b3);
    let cache = AttendCache {
        x: x.clone(),
        y: y.clone(),
        q,
        k,
        v,
        a,
        z0,
        pre1,
        h1,
        pre2,
        h2,
    };
    (out, cache)
}

/// Accumulates parameter gradients of one block into `g` and returns the
/// gradients with respect to its query and context inputs.
fn attend_backward(
    layer: &AttentionLayer,
    c: &AttendCache,
    d_out: &DMatrix<f64>,
    tx: &DMatrix<f64>,
    ty: &DMatrix<f64>,
    g: &mut AttentionLayer,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = c.x.ncols();
    let root = (d as f64).sqrt();
    g.mlp_w3 += d_out.transpose() * &c.h2;
    g.mlp_b3 += col_sums(d_out);
    let dpre2 = (d_out * &layer.mlp_w3).component_mul(&c.pre2.map(gelu_grad));
    g.mlp_w2 += dpre2.transpose() * &c.h1;
    g.mlp_b2 += col_sums(&dpre2);
    let dpre1 = (&dpre2 * &layer.mlp_w2).component_mul(&c.pre1.map(gelu_grad));
    g.mlp_w1 += dpre1.transpose() * &c.z0;
    g.mlp_b1 += col_sums(&dpre1);
    let dz0 = &dpre1 * &layer.mlp_w1;
    let mut dq = dz0.columns(0, d).into_owned();
    let dmessage = dz0.columns(d, d).into_owned();
    let da = &dmessage * c.v.transpose();
    let dv = c.a.transpose() * &dmessage;
    let mut ds = da.component_mul(&c.a);
    for (i, mut row) in ds.row_iter_mut().enumerate() {
        let inner = row.sum();
        for (j, s) in row.iter_mut().enumerate() {
            *s -= c.a[(i, j)] * inner;
        }
    }
    ds /= root;
    dq += &ds * &c.k;
    let dk = ds.transpose() * &c.q;
    let dqlin = dq.component_mul(tx);
    g.w_q += dqlin.transpose() * &c.x;
    let dx = &dqlin * &layer.w_q;
    let dklin = dk.component_mul(ty);
    g.w_k += dklin.transpose() * &c.y;
    g.w_v += dv.transpose() * &c.y;
    let dy = &dklin * &layer.w_k + &dv * &layer.w_v;
    (dx, dy)
}

/// Everything the backward pass needs from a forward evaluation.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    theta_s: DMatrix<f64>,
    theta_t: DMatrix<f64>,
    layers: Vec<(AttendCache, AttendCache)>,
}

fn descriptor_matrix(cloud: &PointCloud, dim: usize) -> Result<DMatrix<f64>> {
    let desc = cloud.descriptors().ok_or(Error::MissingDescriptors)?;
    if desc.dim() != dim {
        return Err(Error::ShapeMismatch {
            expected: (cloud.len(), dim),
            found: (cloud.len(), desc.dim()),
        });
    }
    Ok(DMatrix::from_row_slice(desc.len(), dim, desc.as_flat()))
}

/// Runs the interleaved self/cross attention stack on the descriptors of the
/// (warped) source and the target, modulated by their positional encodings.
pub fn attention_forward(
    params: &AttentionParams,
    warped: &PointCloud,
    target: &PointCloud,
) -> Result<(DMatrix<f64>, DMatrix<f64>, AttentionCache)> {
    if params.encoding.dim != params.dim {
        return Err(Error::ShapeMismatch {
            expected: (params.dim, params.dim),
            found: (params.encoding.dim, params.dim),
        });
    }
    let mut fs = descriptor_matrix(warped, params.dim)?;
    let mut ft = descriptor_matrix(target, params.dim)?;
    let theta_s = params.encoding.encode(warped);
    let theta_t = params.encoding.encode(target);
    let mut caches = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let (os, cs, ot, ct) = if AttentionParams::is_cross(l) {
            let (os, cs) = attend(layer, &fs, &theta_s, &ft, &theta_t);
            let (ot, ct) = attend(layer, &ft, &theta_t, &fs, &theta_s);
            (os, cs, ot, ct)
        } else {
            let (os, cs) = attend(layer, &fs, &theta_s, &fs, &theta_s);
            let (ot, ct) = attend(layer, &ft, &theta_t, &ft, &theta_t);
            (os, cs, ot, ct)
        };
        fs += os;
        ft += ot;
        caches.push((cs, ct));
    }
    Ok((
        fs,
        ft,
        AttentionCache {
            theta_s,
            theta_t,
            layers: caches,
        },
    ))
}

/// Parameter gradients given the gradients of the two output feature
/// matrices.
pub fn attention_backward(
    params: &AttentionParams,
    cache: &AttentionCache,
    d_source: &DMatrix<f64>,
    d_target: &DMatrix<f64>,
) -> Result<AttentionParams> {
    if cache.layers.len() != params.layers.len() {
        return Err(Error::MissingForwardCache);
    }
    let shape_s = (cache.theta_s.nrows(), params.dim);
    let shape_t = (cache.theta_t.nrows(), params.dim);
    if d_source.shape() != shape_s || d_target.shape() != shape_t {
        return Err(Error::ShapeMismatch {
            expected: shape_s,
            found: d_source.shape(),
        });
    }
    let mut grads = params.zeros_like();
    let mut gs = d_source.clone();
    let mut gt = d_target.clone();
    let (ts, tt) = (&cache.theta_s, &cache.theta_t);
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let (cs, ct) = &cache.layers[l];
        let g = &mut grads.layers[l];
        if AttentionParams::is_cross(l) {
            let (dxs, dyt) = attend_backward(layer, cs, &gs, ts, tt, g);
            let (dxt, dys) = attend_backward(layer, ct, &gt, tt, ts, g);
            gs += dxs + dys;
            gt += dxt + dyt;
        } else {
            let (dxs, dys) = attend_backward(layer, cs, &gs, ts, ts, g);
            let (dxt, dyt) = attend_backward(layer, ct, &gt, tt, tt, g);
            gs += dxs + dys;
            gt += dxt + dyt;
        }
    }
    Ok(grads)
}

/// The attention stack as a `g_θ` feature network.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionNet {
    pub params: AttentionParams,
}

impl FeatureNetwork for AttentionNet {
    fn features(&self, warped: &PointCloud, target: &PointCloud) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        attention_forward(&self.params, warped, target).map(|(s, t, _)| (s, t))
    }
}

/// Loss, parameter gradients and prediction of one `g_θ` evaluation.
#[derive(Debug, Clone)]
pub struct PipelineGradient {
    pub loss: f64,
    pub grads: AttentionParams,
    /// Gradient of the loss with respect to the pre-Sinkhorn logits.
    pub d_logits: Vec<f64>,
    pub prediction: MatchMatrix,
}

/// Focal loss of `g_θ(E^t)` against `e0`, differentiated through the final
/// Sinkhorn, the logit head and the attention stack. The pose fit does not
/// depend on the parameters and is treated as data.
pub fn pipeline_loss_and_grad(
    params: &AttentionParams,
    et: &MatchMatrix,
    pair: CloudPair<'_>,
    e0: &MatchMatrix,
    cfg: &GThetaConfig,
    focal: FocalParams,
) -> Result<PipelineGradient> {
    pair.check_descriptors()?;
    let (_, _, _, warped) = smooth_and_warp(et, pair, cfg)?;
    let (fs, ft, cache) = attention_forward(params, &warped, pair.target)?;
    let root = (params.dim as f64).sqrt();
    let logits = MatchMatrix::from_dmatrix(&((&fs * ft.transpose()) / root))?;
    let (prediction, tape) = SinkhornTape::forward(&logits, cfg.sinkhorn_iterations)?;
    let (loss, d_pred) = simple_loss_with_grad(&prediction, e0, focal)?;
    let d_logits = tape.backward(&d_pred)?;
    let dl = DMatrix::from_row_slice(logits.n_rows(), logits.n_cols(), &d_logits);
    let d_s = (&dl * &ft) / root;
    let d_t = (dl.transpose() * &fs) / root;
    let grads = attention_backward(params, &cache, &d_s, &d_t)?;
    Ok(PipelineGradient {
        loss,
        grads,
        d_logits,
        prediction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use crate::diffusion::simple_loss;
    use crate::geometry::{Descriptors, Vec3};
    use crate::matrixspace::ground_truth_matrix;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointCloud {
        let pts: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let desc: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        PointCloud::new(pts).unwrap().with_descriptors(Descriptors::from_flat(d, desc).unwrap()).unwrap()
    }

    fn params(d: usize, layers: usize, seed: u64) -> AttentionParams {
        let mut p = AttentionParams::random(d, layers, PositionalEncoding::new(1, d, 1.0).unwrap(), seed).unwrap();
        // non-zero biases so their gradients are exercised
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
        for l in &mut p.layers {
            for t in [&mut l.mlp_b1, &mut l.mlp_b2, &mut l.mlp_b3] {
                t.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
            }
        }
        p
    }

    /// Plain nested-loop evaluation of the network, written independently of
    /// the matrix code above.
    fn scalar_forward(p: &AttentionParams, s: &PointCloud, t: &PointCloud) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let d = p.dim;
        let rows = |c: &PointCloud| -> Vec<Vec<f64>> { (0..c.len()).map(|i| c.descriptors().unwrap().row(i).to_vec()).collect() };
        let enc = |c: &PointCloud| -> Vec<Vec<f64>> {
            c.points()
                .iter()
                .map(|pt| {
                    let mut e = vec![0.0; d];
                    p.encoding.encode_into(pt, &mut e);
                    e
                })
                .collect()
        };
        let matvec = |w: &DMatrix<f64>, x: &[f64]| -> Vec<f64> { (0..w.nrows()).map(|r| (0..w.ncols()).map(|c| w[(r, c)] * x[c]).sum()).collect() };
        let block = |l: &AttentionLayer, x: &[Vec<f64>], tx: &[Vec<f64>], y: &[Vec<f64>], ty: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let qs: Vec<Vec<f64>> = x.iter().zip(tx).map(|(xi, ti)| matvec(&l.w_q, xi).iter().zip(ti).map(|(a, b)| a * b).collect()).collect();
            let ks: Vec<Vec<f64>> = y.iter().zip(ty).map(|(yj, tj)| matvec(&l.w_k, yj).iter().zip(tj).map(|(a, b)| a * b).collect()).collect();
            let vs: Vec<Vec<f64>> = y.iter().map(|yj| matvec(&l.w_v, yj)).collect();
            qs.iter()
                .map(|qi| {
                    let scores: Vec<f64> = ks.iter().map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt()).collect();
                    let top = scores.iter().cloned().fold(f64::MIN, f64::max);
                    let w: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
                    let z: f64 = w.iter().sum();
                    let mut m = vec![0.0; d];
                    for (wj, vj) in w.iter().zip(&vs) {
                        for c in 0..d {
                            m[c] += wj / z * vj[c];
                        }
                    }
                    let mut cat = qi.clone();
                    cat.extend(m);
                    let h1: Vec<f64> = matvec(&l.mlp_w1, &cat).iter().enumerate().map(|(r, v)| gelu(v + l.mlp_b1[r])).collect();
                    let h2: Vec<f64> = matvec(&l.mlp_w2, &h1).iter().enumerate().map(|(r, v)| gelu(v + l.mlp_b2[r])).collect();
                    matvec(&l.mlp_w3, &h2).iter().enumerate().map(|(r, v)| v + l.mlp_b3[r]).collect()
                })
                .collect()
        };
        let (mut fs, mut ft) = (rows(s), rows(t));
        let (es, et) = (enc(s), enc(t));
        for (li, l) in p.layers.iter().enumerate() {
            let (us, ut) = if li % 2 == 1 {
                (block(l, &fs, &es, &ft, &et), block(l, &ft, &et, &fs, &es))
            } else {
                (block(l, &fs, &es, &fs, &es), block(l, &ft, &et, &ft, &et))
            };
            for (f, u) in fs.iter_mut().zip(us) {
                f.iter_mut().zip(u).for_each(|(a, b)| *a += b);
            }
            for (f, u) in ft.iter_mut().zip(ut) {
                f.iter_mut().zip(u).for_each(|(a, b)| *a += b);
            }
        }
        (fs, ft)
    }

    #[test]
    fn matches_scalar_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(120);
        for layers in [1usize, 2, 3] {
            let p = params(4, layers, 121);
            let s = random_cloud(&mut rng, 3, 4);
            let t = random_cloud(&mut rng, 3, 4);
            let (fs, ft, _) = attention_forward(&p, &s, &t).unwrap();
            let (os, ot) = scalar_forward(&p, &s, &t);
            for i in 0..3 {
                for c in 0..4 {
                    assert!((fs[(i, c)] - os[i][c]).abs() < 1e-10);
                    assert!((ft[(i, c)] - ot[i][c]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn zero_output_layer_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(122);
        let p = params(6, 2, 123).with_zero_output();
        let s = random_cloud(&mut rng, 7, 6);
        let t = random_cloud(&mut rng, 5, 6);
        let (fs, ft, _) = attention_forward(&p, &s, &t).unwrap();
        assert_eq!(fs.as_slice().len(), 42);
        assert_eq!(fs, descriptor_matrix(&s, 6).unwrap());
        assert_eq!(ft, descriptor_matrix(&t, 6).unwrap());
    }

    #[test]
    fn permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(124);
        let p = params(5, 2, 125);
        let s = random_cloud(&mut rng, 8, 5);
        let t = random_cloud(&mut rng, 6, 5);
        let order_s = [3usize, 0, 7, 1, 6, 2, 5, 4];
        let order_t = [5usize, 2, 0, 4, 1, 3];
        let (fs, ft, _) = attention_forward(&p, &s, &t).unwrap();
        let (ps, pt, _) = attention_forward(&p, &s.select(&order_s), &t.select(&order_t)).unwrap();
        for (a, &i) in order_s.iter().enumerate() {
            assert!((ps.row(a) - fs.row(i)).amax() < 1e-12);
        }
        for (a, &j) in order_t.iter().enumerate() {
            assert!((pt.row(a) - ft.row(j)).amax() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(126);
        let p = params(4, 2, 127);
        let s = random_cloud(&mut rng, 5, 4);
        let t = random_cloud(&mut rng, 5, 4);
        let (_, _, cache) = attention_forward(&p, &s, &t).unwrap();
        let g = attention_backward(&p, &cache, &DMatrix::zeros(5, 4), &DMatrix::zeros(5, 4)).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
        let short = AttentionParams::random(4, 1, p.encoding, 0).unwrap();
        assert_eq!(
            attention_backward(&short, &cache, &DMatrix::zeros(5, 4), &DMatrix::zeros(5, 4)).unwrap_err(),
            Error::MissingForwardCache
        );
    }

    fn fd_case(seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = params(4, 2, seed);
        let s = random_cloud(&mut rng, 5, 4);
        let t = random_cloud(&mut rng, 5, 4);
        let e0 = ground_truth_matrix(5, 5, &[(0, 2), (1, 4), (2, 0), (3, 1), (4, 3)], 100).unwrap();
        let et = MatchMatrix::from_fn(5, 5, |_, _| rng.random_range(0.0..1.0)).unwrap();
        let cfg = GThetaConfig::default();
        let fp = FocalParams::default();
        let pair = CloudPair::new(&s, &t);
        let out = pipeline_loss_and_grad(&p, &et, pair, &e0, &cfg, fp).unwrap();
        let analytic = out.grads.to_flat();
        let base = p.to_flat();
        let loss_at = |flat: &[f64]| {
            let mut q = p.clone();
            q.set_flat(flat).unwrap();
            let pred = super::super::g_theta(&et, pair, &AttentionNet { params: q }, &cfg).unwrap();
            simple_loss(&pred, &e0, fp).unwrap()
        };
        assert!((loss_at(&base) - out.loss).abs() < 1e-14);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let k = rng.random_range(0..base.len());
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[k] += h;
            minus[k] -= h;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            // floor keeps near-zero gradients from dividing finite-difference round-off
            let rel = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-7);
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            let worst = fd_case(seed);
            assert!(worst < 1e-4, "seed {seed}: {worst}");
        }
    }

    #[test]
    fn uniform_logit_shift_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(128);
        let p = params(4, 2, 129);
        let s = random_cloud(&mut rng, 6, 4);
        let t = random_cloud(&mut rng, 6, 4);
        let e0 = ground_truth_matrix(6, 6, &[(0, 0), (1, 1), (2, 2), (3, 3), (4, 4), (5, 5)], 100).unwrap();
        let out = pipeline_loss_and_grad(&p, &MatchMatrix::uniform(6, 6), CloudPair::new(&s, &t), &e0, &GThetaConfig::default(), FocalParams::default()).unwrap();
        assert!(out.d_logits.iter().sum::<f64>().abs() < 1e-8);
    }

    #[test]
    fn flat_round_trip() {
        let p = params(3, 2, 130);
        let mut q = p.zeros_like();
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.num_params(), 2 * (3 * 9 + 36 + 6 + 18 + 3 + 9 + 3));
        assert!(q.set_flat(&[0.0; 3]).is_err());
    }
}
