//! Affine + radial-basis-function resampling maps and their composition.
//!
//! A single map `M: R^D -> R^D` is
//!
//! ```text
//! M_i(x) = a_i^T x + b_i + sum_r v_{r,i} exp(-|x - x_r|^2 / (2 s_r^2))
//! ```
//!
//! The affine matrix `A`, the offset `b` and the RBF weights `V` are the
//! trainable parameters. Centers `x_r` and widths `s_r` are fixed when the
//! map is built. Parameters are packed as `A` (row-major), then `b`, then
//! `V` (row-major, one row per output coordinate).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::particles::ParticleSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RbfMapDoc", into = "RbfMapDoc")]
pub struct RbfMap {
    dim: usize,
    affine: Vec<f64>,
    offset: Vec<f64>,
    rbf_weights: Vec<f64>,
    centers: Vec<f64>,
    widths: Vec<f64>,
}

impl RbfMap {
    /// `A = I`, `b = 0`, `V = 0` with the given kernel geometry.
    pub fn identity(dim: usize, centers: Vec<Vec<f64>>, widths: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        if centers.len() != widths.len() {
            return Err(Error::CountMismatch {
                expected: centers.len(),
                found: widths.len(),
            });
        }
        if let Some(&w) = widths.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::invalid("rbf_widths", format!("{w} must be positive")));
        }
        let mut flat = Vec::with_capacity(centers.len() * dim);
        for c in centers {
            if c.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: c.len(),
                });
            }
            flat.extend(c);
        }
        let mut affine = vec![0.0; dim * dim];
        for i in 0..dim {
            affine[i * dim + i] = 1.0;
        }
        Ok(Self {
            dim,
            affine,
            offset: vec![0.0; dim],
            rbf_weights: vec![0.0; dim * widths.len()],
            centers: flat,
            widths,
        })
    }

    /// Identity map with kernels placed on `set` (see [`rbf_geometry`]).
    pub fn identity_on(set: &ParticleSet, rbf_count: usize) -> Result<Self> {
        let (centers, widths) = rbf_geometry(set, rbf_count);
        Self::identity(set.dim(), centers, widths)
    }

    /// Pure affine map `x -> A x + b` without kernels.
    pub fn affine(dim: usize, matrix: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        let mut map = Self::identity(dim, Vec::new(), Vec::new())?;
        if matrix.len() != dim * dim || offset.len() != dim {
            return Err(Error::CountMismatch {
                expected: dim * dim + dim,
                found: matrix.len() + offset.len(),
            });
        }
        map.affine = matrix;
        map.offset = offset;
        Ok(map)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rbf_count(&self) -> usize {
        self.widths.len()
    }

    pub fn affine_matrix(&self) -> &[f64] {
        &self.affine
    }

    pub fn affine_offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn rbf_weights(&self) -> &[f64] {
        &self.rbf_weights
    }

    pub fn rbf_center(&self, r: usize) -> &[f64] {
        &self.centers[r * self.dim..(r + 1) * self.dim]
    }

    pub fn rbf_widths(&self) -> &[f64] {
        &self.widths
    }

    /// `D*D + D + D*R`.
    pub fn param_count(&self) -> usize {
        self.affine.len() + self.offset.len() + self.rbf_weights.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend_from_slice(&self.affine);
        p.extend_from_slice(&self.offset);
        p.extend_from_slice(&self.rbf_weights);
        p
    }

    /// Copy with trainable parameters replaced; geometry is kept.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.param_count() {
            return Err(Error::CountMismatch {
                expected: self.param_count(),
                found: params.len(),
            });
        }
        let (a, rest) = params.split_at(self.affine.len());
        let (b, v) = rest.split_at(self.dim);
        Ok(Self {
            affine: a.to_vec(),
            offset: b.to_vec(),
            rbf_weights: v.to_vec(),
            ..self.clone()
        })
    }

    #[inline]
    fn kernel_values(&self, x: &[f64], out: &mut [f64]) {
        for (r, k) in out.iter_mut().enumerate() {
            let c = self.rbf_center(r);
            let s2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            let w = self.widths[r];
            *k = (-s2 / (2.0 * w * w)).exp();
        }
    }

    fn apply_into(&self, x: &[f64], kernels: &mut [f64], out: &mut [f64]) {
        let dim = self.dim;
        let rc = self.rbf_count();
        self.kernel_values(x, kernels);
        for i in 0..dim {
            let row = &self.affine[i * dim..(i + 1) * dim];
            let mut v: f64 = row.iter().zip(x).map(|(a, xj)| a * xj).sum();
            v += self.offset[i];
            let vrow = &self.rbf_weights[i * rc..(i + 1) * rc];
            v += vrow.iter().zip(kernels.iter()).map(|(a, k)| a * k).sum::<f64>();
            out[i] = v;
        }
    }

    /// Evaluates the map at one point.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        let mut kernels = vec![0.0; self.rbf_count()];
        let mut out = vec![0.0; self.dim];
        self.apply_into(x, &mut kernels, &mut out);
        Ok(out)
    }

    /// Maps a row-major buffer of points; order preserved.
    pub fn apply_batch(&self, xs: &[f64]) -> Result<Vec<f64>> {
        if !xs.len().is_multiple_of(self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: xs.len() % self.dim,
            });
        }
        let mut kernels = vec![0.0; self.rbf_count()];
        let mut out = vec![0.0; xs.len()];
        for (x, y) in xs.chunks_exact(self.dim).zip(out.chunks_exact_mut(self.dim)) {
            self.apply_into(x, &mut kernels, y);
        }
        Ok(out)
    }

    /// Pulls a per-point upstream gradient `dJ/dM(x_p)` back to the
    /// parameters: `sum_p (dM(x_p)/dtheta)^T upstream_p`, in packing order.
    pub fn param_gradient(&self, xs: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        if xs.len() != upstream.len() {
            return Err(Error::CountMismatch {
                expected: xs.len(),
                found: upstream.len(),
            });
        }
        if !xs.len().is_multiple_of(self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: xs.len() % self.dim,
            });
        }
        let dim = self.dim;
        let rc = self.rbf_count();
        let mut grad = vec![0.0; self.param_count()];
        let (ga, rest) = grad.split_at_mut(dim * dim);
        let (gb, gv) = rest.split_at_mut(dim);
        let mut kernels = vec![0.0; rc];
        for (x, up) in xs.chunks_exact(dim).zip(upstream.chunks_exact(dim)) {
            self.kernel_values(x, &mut kernels);
            for i in 0..dim {
                let u = up[i];
                for j in 0..dim {
                    ga[i * dim + j] += u * x[j];
                }
                gb[i] += u;
                for r in 0..rc {
                    gv[i * rc + r] += u * kernels[r];
                }
            }
        }
        Ok(grad)
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found == self.dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim,
                found,
            })
        }
    }
}

/// Kernel placement for a map fitted on `set`: every `ceil(L/R)`-th particle
/// in order of the first coordinate becomes a center, and all kernels share
/// the median pairwise distance of the set as width.
pub fn rbf_geometry(set: &ParticleSet, rbf_count: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let count = set.len();
    let r = rbf_count.min(count);
    if r == 0 {
        return (Vec::new(), Vec::new());
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&a, &b| set.location(a)[0].total_cmp(&set.location(b)[0]).then(a.cmp(&b)));
    let stride = count.div_ceil(r);
    let centers: Vec<Vec<f64>> = order
        .iter()
        .step_by(stride)
        .take(r)
        .map(|&i| set.location(i).to_vec())
        .collect();
    let width = median_pairwise_distance(set);
    let widths = vec![width; centers.len()];
    (centers, widths)
}

/// Median Euclidean distance over all unordered pairs. Falls back to the
/// largest distance, then to 1, when the median is zero.
pub fn median_pairwise_distance(set: &ParticleSet) -> f64 {
    let n = set.len();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = set
                .location(i)
                .iter()
                .zip(set.location(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let median = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if median > 0.0 {
        median
    } else if d[m - 1] > 0.0 {
        d[m - 1]
    } else {
        1.0
    }
}

/// Ordered sequence of maps; `compose` applies the first map first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MapChainDoc")]
pub struct MapChain {
    dim: usize,
    maps: Vec<RbfMap>,
}

impl MapChain {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            maps: Vec::new(),
        }
    }

    pub fn from_maps(dim: usize, maps: Vec<RbfMap>) -> Result<Self> {
        let mut chain = Self::new(dim);
        for m in maps {
            chain.push(m)?;
        }
        Ok(chain)
    }

    pub fn push(&mut self, map: RbfMap) -> Result<()> {
        if map.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: map.dim(),
            });
        }
        self.maps.push(map);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn maps(&self) -> &[RbfMap] {
        &self.maps
    }

    /// `M_K(...M_2(M_1(x)))`; the empty chain is the identity.
    pub fn compose(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        self.maps.iter().try_fold(x.to_vec(), |acc, m| m.apply(&acc))
    }

    /// Composed flow on a row-major buffer of points.
    pub fn compose_batch(&self, xs: &[f64]) -> Result<Vec<f64>> {
        if !xs.len().is_multiple_of(self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: xs.len() % self.dim,
            });
        }
        self.maps
            .iter()
            .try_fold(xs.to_vec(), |acc, m| m.apply_batch(&acc))
    }

    /// Pushes extra prior-space points through the flow after it has been
    /// built, e.g. to densify the posterior by interpolation.
    pub fn upsample(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        points.iter().map(|p| self.compose(p)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Serialize, Deserialize)]
struct RbfMapDoc {
    dim: usize,
    #[serde(rename = "R")]
    rbf_count: usize,
    #[serde(rename = "A")]
    affine: Vec<Vec<f64>>,
    b: Vec<f64>,
    #[serde(rename = "V")]
    rbf_weights: Vec<Vec<f64>>,
    centers: Vec<Vec<f64>>,
    widths: Vec<f64>,
}

impl From<RbfMap> for RbfMapDoc {
    fn from(m: RbfMap) -> Self {
        let rc = m.rbf_count();
        Self {
            dim: m.dim,
            rbf_count: rc,
            affine: m.affine.chunks(m.dim).map(<[f64]>::to_vec).collect(),
            b: m.offset.clone(),
            rbf_weights: (0..m.dim)
                .map(|i| m.rbf_weights[i * rc..(i + 1) * rc].to_vec())
                .collect(),
            centers: m.centers.chunks(m.dim).map(<[f64]>::to_vec).collect(),
            widths: m.widths,
        }
    }
}

impl TryFrom<RbfMapDoc> for RbfMap {
    type Error = Error;

    fn try_from(doc: RbfMapDoc) -> Result<Self> {
        if doc.centers.len() != doc.rbf_count {
            return Err(Error::CountMismatch {
                expected: doc.rbf_count,
                found: doc.centers.len(),
            });
        }
        let base = RbfMap::identity(doc.dim, doc.centers, doc.widths)?;
        let shape_ok = doc.affine.len() == doc.dim
            && doc.affine.iter().all(|r| r.len() == doc.dim)
            && doc.rbf_weights.len() == doc.dim
            && doc.rbf_weights.iter().all(|r| r.len() == doc.rbf_count);
        if !shape_ok {
            return Err(Error::Format("map matrix shapes do not match dim and R".into()));
        }
        let mut params: Vec<f64> = doc.affine.into_iter().flatten().collect();
        params.extend(doc.b);
        params.extend(doc.rbf_weights.into_iter().flatten());
        base.with_params(&params)
    }
}

#[derive(Deserialize)]
struct MapChainDoc {
    dim: usize,
    maps: Vec<RbfMap>,
}

impl TryFrom<MapChainDoc> for MapChain {
    type Error = Error;

    fn try_from(doc: MapChainDoc) -> Result<Self> {
        MapChain::from_maps(doc.dim, doc.maps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_rbf() -> RbfMap {
        RbfMap::identity(1, vec![vec![0.0]], vec![1.0])
            .unwrap()
            .with_params(&[1.0, 0.0, 1.0])
            .unwrap()
    }

    #[test]
    fn identity_maps() {
        let m = RbfMap::identity(1, vec![vec![-1.0], vec![2.0]], vec![0.5, 0.5]).unwrap();
        assert_eq!(m.apply(&[3.7]).unwrap(), vec![3.7]);
        assert_eq!(m.params(), vec![1.0, 0.0, 0.0, 0.0]);
        let m = RbfMap::identity(2, vec![vec![0.0, 0.0]], vec![1.0]).unwrap();
        assert_eq!(m.apply(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(m.param_count(), 4 + 2 + 2);
        let m = RbfMap::identity(1, vec![], vec![]).unwrap();
        assert_eq!(m.param_count(), 2);
        assert_eq!(m.apply(&[-0.25]).unwrap(), vec![-0.25]);
        assert!(RbfMap::identity(1, vec![vec![0.0]], vec![0.0]).is_err());
        assert!(RbfMap::identity(2, vec![vec![0.0]], vec![1.0]).is_err());
    }

    #[test]
    fn evaluation() {
        let m = RbfMap::affine(1, vec![2.0], vec![1.0]).unwrap();
        assert_eq!(m.apply(&[3.0]).unwrap(), vec![7.0]);
        let m = one_rbf();
        assert_eq!(m.apply(&[0.0]).unwrap(), vec![1.0]);
        assert_abs_diff_eq!(
            m.apply(&[2.0]).unwrap()[0],
            2.135_335_283_236_613,
            epsilon = 1e-15
        );
        assert!(m.apply(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn batch_evaluation() {
        let m = RbfMap::affine(1, vec![2.0], vec![0.0]).unwrap();
        assert_eq!(m.apply_batch(&[1.0, 2.0]).unwrap(), vec![2.0, 4.0]);
        let out = one_rbf().apply_batch(&[0.0, 2.0]).unwrap();
        assert_eq!(out[0], 1.0);
        assert_abs_diff_eq!(out[1], 2.135_335_283_236_613, epsilon = 1e-15);
        let id = RbfMap::identity(2, vec![vec![0.0, 1.0]], vec![0.3]).unwrap();
        let xs = [0.5, -1.0, 2.0, 3.0];
        assert_eq!(id.apply_batch(&xs).unwrap(), xs.to_vec());
    }

    #[test]
    fn param_gradient_basics() {
        let m = one_rbf();
        assert_eq!(m.param_gradient(&[0.3, 1.2], &[0.0, 0.0]).unwrap(), vec![0.0; 3]);
        let g = m.param_gradient(&[0.7], &[-2.5]).unwrap();
        assert_eq!(g[1], -2.5);
        assert_eq!(g[0], -2.5 * 0.7);
        assert!(m.param_gradient(&[0.7, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn composition() {
        let id = RbfMap::identity(1, vec![], vec![]).unwrap();
        let chain = MapChain::from_maps(1, vec![id.clone(), id]).unwrap();
        assert_eq!(chain.compose(&[0.3]).unwrap(), vec![0.3]);

        let first = RbfMap::affine(1, vec![2.0], vec![0.0]).unwrap();
        let second = RbfMap::affine(1, vec![1.0], vec![3.0]).unwrap();
        let chain = MapChain::from_maps(1, vec![first, second]).unwrap();
        assert_eq!(chain.compose(&[1.0]).unwrap(), vec![5.0]);

        let empty = MapChain::new(1);
        assert_eq!(empty.compose(&[42.0]).unwrap(), vec![42.0]);
        assert_eq!(
            empty.upsample(&[vec![1.0], vec![2.0]]).unwrap(),
            vec![vec![1.0], vec![2.0]]
        );
        assert!(empty.compose(&[1.0, 2.0]).is_err());

        let mut chain = MapChain::new(2);
        assert!(chain.push(one_rbf()).is_err());
    }

    #[test]
    fn geometry_from_particles() {
        let xs: Vec<f64> = (0..30).rev().map(|i| i as f64 * 0.1).collect();
        let set = ParticleSet::equal_weight_1d(&xs).unwrap();
        let (centers, widths) = rbf_geometry(&set, 8);
        let firsts: Vec<f64> = centers.iter().map(|c| c[0]).collect();
        let expected: Vec<f64> = (0..8).map(|k| (4 * k) as f64 * 0.1).collect();
        for (a, b) in firsts.iter().zip(&expected) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert!(widths.iter().all(|&w| w == widths[0] && w > 0.0));

        let small = ParticleSet::equal_weight_1d(&[0.0, 1.0, 3.0]).unwrap();
        assert_eq!(median_pairwise_distance(&small), 2.0);
        let (c, _) = rbf_geometry(&small, 8);
        assert_eq!(c.len(), 3);
        let (c, w) = rbf_geometry(&small, 0);
        assert!(c.is_empty() && w.is_empty());

        let collapsed = ParticleSet::equal_weight_1d(&[1.0, 1.0]).unwrap();
        assert_eq!(median_pairwise_distance(&collapsed), 1.0);
    }

    #[test]
    fn json_layout() {
        let m = RbfMap::identity(2, vec![vec![0.0, 1.0], vec![2.0, 3.0]], vec![0.5, 0.7])
            .unwrap()
            .with_params(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0])
            .unwrap();
        let chain = MapChain::from_maps(2, vec![m]).unwrap();
        let value: serde_json::Value = serde_json::from_str(&chain.to_json().unwrap()).unwrap();
        let map = &value["maps"][0];
        assert_eq!(map["dim"], 2);
        assert_eq!(map["R"], 2);
        assert_eq!(map["A"], serde_json::json!([[1.0, 2.0], [3.0, 4.0]]));
        assert_eq!(map["b"], serde_json::json!([5.0, 6.0]));
        assert_eq!(map["V"], serde_json::json!([[7.0, 8.0], [9.0, 10.0]]));
        assert_eq!(map["centers"], serde_json::json!([[0.0, 1.0], [2.0, 3.0]]));
        assert_eq!(map["widths"], serde_json::json!([0.5, 0.7]));
        assert_eq!(MapChain::from_json(&chain.to_json().unwrap()).unwrap(), chain);

        let bad = r#"{"dim":1,"maps":[{"dim":1,"R":1,"A":[[1.0]],"b":[0.0],"V":[[0.0]],"centers":[[0.0]],"widths":[-1.0]}]}"#;
        assert!(MapChain::from_json(bad).is_err());
    }
}
