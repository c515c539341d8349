//! Parametric body models: forward kinematics over a joint tree plus linear
//! blend skinning of a vertex template.
//!
//! External expressive body models plug in through [`BodyModel`]; the
//! built-in [`ToyBodyModel`] (22 joints, 200 vertices) is what the tests and
//! the synthetic data generator use.

use std::sync::Arc;

use candle_core::{Tensor, D};
use ndarray::{Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{BodyParams, JointSet, Skeleton, SHAPE_COEFFS};
use crate::error::{Error, Result};
use crate::rotation::{mat_mul, mat_vec, Mat3};

/// Adapter contract for body models.
pub trait BodyModel: Send + Sync {
    fn name(&self) -> &str;
    fn joint_count(&self) -> usize;
    fn vertex_count(&self) -> usize;
    fn skeleton(&self) -> Arc<Skeleton>;

    /// Differentiable forward pass. `theta: [B, J, 3, 3]`, `beta: [B, 10]`,
    /// `gamma: [B, 3]` → joints `[B, J, 3]` and vertices `[B, V, 3]`.
    fn forward_tensors(&self, theta: &Tensor, beta: &Tensor, gamma: &Tensor) -> Result<(Tensor, Tensor)>;

    /// Forward pass on plain arrays: joints `[T × J × 3]` and vertices `[T × V × 3]`.
    fn forward(&self, params: &BodyParams) -> Result<(JointSet, Array3<f32>)>;
}

/// Looks up a body model by its configuration name.
pub fn body_model_from_name(name: &str) -> Result<Arc<dyn BodyModel>> {
    match name {
        "toy" => Ok(Arc::new(ToyBodyModel::new()?)),
        other => Err(Error::Config(format!(
            "unknown body model `{other}`; external models must be registered by the embedding application"
        ))),
    }
}

/// Arm and leg joint subsets, resolved by joint name.
pub fn limb_index_sets(skeleton: &Skeleton) -> Result<(Vec<usize>, Vec<usize>)> {
    let pick = |keys: &[&str]| -> Vec<usize> {
        skeleton
            .names()
            .iter()
            .enumerate()
            .filter(|(_, n)| keys.iter().any(|k| n.contains(k)))
            .map(|(i, _)| i)
            .collect()
    };
    let upper = pick(&["shoulder", "elbow", "wrist"]);
    let lower = pick(&["hip", "knee", "ankle"]);
    if upper.is_empty() || lower.is_empty() {
        return Err(Error::Invalid("skeleton has no named limb joints".into()));
    }
    Ok((upper, lower))
}

pub const TOY_JOINT_NAMES: [&str; 22] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
];

const TOY_PARENTS: [i32; 22] = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19];

const TOY_OFFSETS: [[f64; 3]; 22] = [
    [0.0, 0.0, 0.0],
    [0.09, -0.08, 0.0],
    [-0.09, -0.08, 0.0],
    [0.0, 0.11, 0.0],
    [0.0, -0.40, 0.0],
    [0.0, -0.40, 0.0],
    [0.0, 0.13, 0.0],
    [0.0, -0.40, 0.0],
    [0.0, -0.40, 0.0],
    [0.0, 0.06, 0.0],
    [0.0, -0.05, -0.12],
    [0.0, -0.05, -0.12],
    [0.0, 0.21, 0.0],
    [0.07, 0.12, 0.0],
    [-0.07, 0.12, 0.0],
    [0.0, 0.10, 0.0],
    [0.10, 0.03, 0.0],
    [-0.10, 0.03, 0.0],
    [0.18, -0.18, 0.0],
    [-0.18, -0.18, 0.0],
    [0.17, -0.17, 0.0],
    [-0.17, -0.17, 0.0],
];

/// Joint subset of the toy model forming a 17-joint skeleton for joints-only data.
pub const JOINTS17_FROM_TOY: [usize; 17] = [0, 2, 5, 8, 1, 4, 7, 3, 9, 12, 15, 16, 18, 20, 17, 19, 21];

pub const JOINT17_NAMES: [&str; 17] = [
    "pelvis",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "spine",
    "thorax",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
];

fn named_skeleton(names: &[&str]) -> Result<Arc<Skeleton>> {
    let probe = Skeleton::new(names.iter().map(|s| s.to_string()).collect(), vec![], vec![])?;
    let (upper, lower) = limb_index_sets(&probe)?;
    Ok(Arc::new(Skeleton::new(probe.names().to_vec(), upper, lower)?))
}

pub fn toy_skeleton() -> Arc<Skeleton> {
    named_skeleton(&TOY_JOINT_NAMES).expect("toy skeleton is valid")
}

pub fn skeleton_17() -> Arc<Skeleton> {
    named_skeleton(&JOINT17_NAMES).expect("17-joint skeleton is valid")
}

/// Shape and skinning data of an articulated model.
#[derive(Debug, Clone)]
pub struct BodyModelSpec {
    pub joint_names: Vec<String>,
    /// Parent index per joint, −1 for the root.
    pub parents: Vec<i32>,
    pub rest_offsets: Vec<[f64; 3]>,
    /// Sparse skinning weights per vertex; rows sum to 1.
    pub vertex_weights: Vec<Vec<(usize, f64)>>,
    /// Rest vertex = Σ anchor weight · rest joint + local offset.
    pub vertex_anchors: Vec<Vec<(usize, f64)>>,
    pub vertex_local: Vec<[f64; 3]>,
    pub vertex_normals: Vec<[f64; 3]>,
    /// `[10][J]` per-joint offset directions.
    pub shape_basis: Vec<Vec<[f64; 3]>>,
}

impl BodyModelSpec {
    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_weights.len()
    }

    /// Checks the tree and weights; returns joints in parent-before-child order.
    pub fn validate(&self) -> Result<Vec<usize>> {
        let j = self.joint_count();
        if self.rest_offsets.len() != j || self.joint_names.len() != j {
            return Err(Error::Invalid("joint arrays disagree in length".into()));
        }
        let roots = self.parents.iter().filter(|&&p| p < 0).count();
        if roots != 1 {
            return Err(Error::Invalid(format!("body model needs exactly one root, found {roots}")));
        }
        if self.parents.iter().any(|&p| p >= j as i32) {
            return Err(Error::Invalid("parent index out of range".into()));
        }
        // Walk up from every joint; a cycle revisits within j steps.
        for start in 0..j {
            let mut cur = start as i32;
            let mut steps = 0;
            while cur >= 0 {
                cur = self.parents[cur as usize];
                steps += 1;
                if steps > j {
                    return Err(Error::Invalid("parent map contains a cycle".into()));
                }
            }
        }
        for (v, row) in self.vertex_weights.iter().enumerate() {
            let sum: f64 = row.iter().map(|(_, w)| w).sum();
            if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&(i, _)| i >= j) {
                return Err(Error::Invalid(format!("vertex {v} weights are invalid (sum {sum})")));
            }
        }
        let v = self.vertex_count();
        if self.vertex_anchors.len() != v || self.vertex_local.len() != v || self.vertex_normals.len() != v {
            return Err(Error::Invalid("vertex arrays disagree in length".into()));
        }
        if self.shape_basis.len() != SHAPE_COEFFS || self.shape_basis.iter().any(|b| b.len() != j) {
            return Err(Error::Invalid("shape basis must have 10 directions over all joints".into()));
        }
        let mut order = Vec::with_capacity(j);
        let mut placed = vec![false; j];
        while order.len() < j {
            for k in 0..j {
                let p = self.parents[k];
                if !placed[k] && (p < 0 || placed[p as usize]) {
                    placed[k] = true;
                    order.push(k);
                }
            }
        }
        Ok(order)
    }
}

/// Scale of one shape coefficient, in meters of joint offset.
const SHAPE_SCALE: f64 = 0.02;

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|c| c / n)
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn bone_radius(name: &str) -> f64 {
    if name.contains("knee") || name.contains("ankle") {
        0.065
    } else if name.contains("elbow") || name.contains("wrist") {
        0.045
    } else if name.contains("spine") {
        0.12
    } else if name.contains("hip") {
        0.08
    } else {
        0.05
    }
}

/// Builds the toy spec: two 4-vertex rings per bone, a head cluster and two torso rings.
pub fn toy_spec() -> BodyModelSpec {
    let j = TOY_PARENTS.len();
    let mut rest = vec![[0.0; 3]; j];
    for k in 0..j {
        let p = TOY_PARENTS[k];
        let base = if p < 0 { [0.0; 3] } else { rest[p as usize] };
        rest[k] = [0, 1, 2].map(|c| base[c] + TOY_OFFSETS[k][c]);
    }
    let mut weights = Vec::new();
    let mut anchors = Vec::new();
    let mut local = Vec::new();
    let mut normals = Vec::new();
    let mut ring = |center_anchor: Vec<(usize, f64)>, skin: Vec<(usize, f64)>, axis: [f64; 3], radius: f64, count: usize, phase: f64| {
        let dir = normalize(axis);
        let helper = if dir[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
        let u = normalize(cross(helper, dir));
        let w = cross(dir, u);
        for i in 0..count {
            let phi = phase + std::f64::consts::TAU * i as f64 / count as f64;
            let n = [0, 1, 2].map(|c| phi.cos() * u[c] + phi.sin() * w[c]);
            weights.push(skin.clone());
            anchors.push(center_anchor.clone());
            local.push(n.map(|c| c * radius));
            normals.push(n);
        }
    };
    for c in 1..j {
        let p = TOY_PARENTS[c] as usize;
        let axis = TOY_OFFSETS[c];
        let r = bone_radius(TOY_JOINT_NAMES[c]);
        ring(vec![(p, 0.75), (c, 0.25)], vec![(p, 1.0)], axis, r, 4, 0.0);
        ring(vec![(p, 0.25), (c, 0.75)], vec![(p, 0.75), (c, 0.25)], axis, r, 4, std::f64::consts::FRAC_PI_4);
    }
    ring(vec![(0, 1.0)], vec![(0, 1.0)], [0.0, 1.0, 0.0], 0.15, 8, 0.0);
    ring(vec![(6, 1.0)], vec![(6, 1.0)], [0.0, 1.0, 0.0], 0.15, 8, 0.0);
    // Head: a 16-point cluster above the head joint.
    for i in 0..16 {
        let phi = std::f64::consts::TAU * i as f64 / 8.0;
        let lift = if i < 8 { 0.05 } else { 0.14 };
        let r = if i < 8 { 0.09 } else { 0.07 };
        let n = normalize([phi.cos(), 0.3, phi.sin()]);
        weights.push(vec![(15, 1.0)]);
        anchors.push(vec![(15, 1.0)]);
        local.push([r * phi.cos(), lift, r * phi.sin()]);
        normals.push(n);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_b0d7);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(SHAPE_COEFFS);
    while basis.len() < SHAPE_COEFFS {
        // The root offset stays fixed so translation alone places the pelvis.
        let mut v: Vec<f64> = (0..j * 3)
            .map(|i| if i < 3 { 0.0 } else { StandardNormal.sample(&mut rng) })
            .collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let shape_basis = basis
        .into_iter()
        .map(|v| (0..j).map(|k| [0, 1, 2].map(|c| v[k * 3 + c] * SHAPE_SCALE)).collect())
        .collect();

    BodyModelSpec {
        joint_names: TOY_JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
        parents: TOY_PARENTS.to_vec(),
        rest_offsets: TOY_OFFSETS.to_vec(),
        vertex_weights: weights,
        vertex_anchors: anchors,
        vertex_local: local,
        vertex_normals: normals,
        shape_basis,
    }
}

/// Posed skeleton and skin of one frame.
#[derive(Debug, Clone)]
pub struct PosedFrame {
    pub joints: Vec<[f64; 3]>,
    pub vertices: Vec<[f64; 3]>,
    pub normals: Vec<[f64; 3]>,
}

pub struct ToyBodyModel {
    spec: BodyModelSpec,
    order: Vec<usize>,
    skeleton: Arc<Skeleton>,
}

impl ToyBodyModel {
    pub fn new() -> Result<Self> {
        Self::from_spec(toy_spec())
    }

    pub fn from_spec(spec: BodyModelSpec) -> Result<Self> {
        let order = spec.validate()?;
        let names: Vec<&str> = spec.joint_names.iter().map(String::as_str).collect();
        let skeleton = match named_skeleton(&names) {
            Ok(s) => s,
            Err(_) => Arc::new(Skeleton::new(spec.joint_names.clone(), vec![], vec![])?),
        };
        Ok(Self { spec, order, skeleton })
    }

    pub fn spec(&self) -> &BodyModelSpec {
        &self.spec
    }

    fn shaped_offsets(&self, beta: &[f64]) -> Vec<[f64; 3]> {
        let mut out = self.spec.rest_offsets.clone();
        for (k, b) in beta.iter().enumerate() {
            for (o, d) in out.iter_mut().zip(&self.spec.shape_basis[k]) {
                for c in 0..3 {
                    o[c] += b * d[c];
                }
            }
        }
        out
    }

    /// Plain forward pass for one frame: rotations `[J]`, shape `[10]`, translation.
    pub fn pose(&self, rotations: &[Mat3], beta: &[f64], gamma: [f64; 3]) -> Result<PosedFrame> {
        let j = self.spec.joint_count();
        if rotations.len() != j || beta.len() != SHAPE_COEFFS {
            return Err(Error::Shape(format!(
                "expected {j} rotations and {SHAPE_COEFFS} shape coefficients"
            )));
        }
        let offsets = self.shaped_offsets(beta);
        let mut global = vec![[[0.0; 3]; 3]; j];
        let mut joints = vec![[0.0; 3]; j];
        let mut rest = vec![[0.0; 3]; j];
        for &k in &self.order {
            let p = self.spec.parents[k];
            if p < 0 {
                global[k] = rotations[k];
                joints[k] = [0, 1, 2].map(|c| gamma[c] + offsets[k][c]);
                rest[k] = offsets[k];
            } else {
                let p = p as usize;
                global[k] = mat_mul(&global[p], &rotations[k]);
                let step = mat_vec(&global[p], &offsets[k]);
                joints[k] = [0, 1, 2].map(|c| joints[p][c] + step[c]);
                rest[k] = [0, 1, 2].map(|c| rest[p][c] + offsets[k][c]);
            }
        }
        let mut vertices = Vec::with_capacity(self.spec.vertex_count());
        let mut normals = Vec::with_capacity(self.spec.vertex_count());
        for v in 0..self.spec.vertex_count() {
            let mut rest_v = self.spec.vertex_local[v];
            for &(a, w) in &self.spec.vertex_anchors[v] {
                for c in 0..3 {
                    rest_v[c] += w * rest[a][c];
                }
            }
            let mut pos = [0.0; 3];
            let mut nrm = [0.0; 3];
            for &(k, w) in &self.spec.vertex_weights[v] {
                let local = [0, 1, 2].map(|c| rest_v[c] - rest[k][c]);
                let moved = mat_vec(&global[k], &local);
                let turned = mat_vec(&global[k], &self.spec.vertex_normals[v]);
                for c in 0..3 {
                    pos[c] += w * (moved[c] + joints[k][c]);
                    nrm[c] += w * turned[c];
                }
            }
            vertices.push(pos);
            normals.push(normalize(nrm));
        }
        Ok(PosedFrame {
            joints,
            vertices,
            normals,
        })
    }

    fn dense(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let (j, v) = (self.spec.joint_count(), self.spec.vertex_count());
        let mut weights = vec![0.0; v * j];
        let mut anchors = vec![0.0; v * j];
        for i in 0..v {
            for &(k, w) in &self.spec.vertex_weights[i] {
                weights[i * j + k] += w;
            }
            for &(k, w) in &self.spec.vertex_anchors[i] {
                anchors[i * j + k] += w;
            }
        }
        let local = self.spec.vertex_local.iter().flatten().copied().collect();
        let basis = self
            .spec
            .shape_basis
            .iter()
            .flat_map(|b| b.iter().flatten().copied())
            .collect();
        (weights, anchors, local, basis)
    }
}

impl BodyModel for ToyBodyModel {
    fn name(&self) -> &str {
        "toy"
    }

    fn joint_count(&self) -> usize {
        self.spec.joint_count()
    }

    fn vertex_count(&self) -> usize {
        self.spec.vertex_count()
    }

    fn skeleton(&self) -> Arc<Skeleton> {
        self.skeleton.clone()
    }

    fn forward_tensors(&self, theta: &Tensor, beta: &Tensor, gamma: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, j, _, _) = theta.dims4()?;
        if j != self.joint_count() || beta.dims() != [b, SHAPE_COEFFS] || gamma.dims() != [b, 3] {
            return Err(Error::Shape(format!(
                "body forward: theta {:?}, beta {:?}, gamma {:?}",
                theta.dims(),
                beta.dims(),
                gamma.dims()
            )));
        }
        let v = self.vertex_count();
        let (dev, dtype) = (theta.device(), theta.dtype());
        let (weights, anchors, local, basis) = self.dense();
        let to_t = |data: Vec<f64>, shape: &[usize]| -> Result<Tensor> {
            Ok(Tensor::from_vec(data, shape, dev)?.to_dtype(dtype)?)
        };
        let rest_offsets = to_t(self.spec.rest_offsets.iter().flatten().copied().collect(), &[1, j, 3])?;
        let basis = to_t(basis, &[SHAPE_COEFFS, j * 3])?;
        let offsets = beta.matmul(&basis)?.reshape((b, j, 3))?.broadcast_add(&rest_offsets)?;

        let mut global: Vec<Option<Tensor>> = vec![None; j];
        let mut joints: Vec<Option<Tensor>> = vec![None; j];
        let mut rest: Vec<Option<Tensor>> = vec![None; j];
        for &k in &self.order {
            let rot = theta.narrow(1, k, 1)?.squeeze(1)?.contiguous()?;
            let off = offsets.narrow(1, k, 1)?.squeeze(1)?;
            let p = self.spec.parents[k];
            if p < 0 {
                joints[k] = Some((gamma + &off)?);
                rest[k] = Some(off);
                global[k] = Some(rot);
            } else {
                let p = p as usize;
                let gp = global[p].as_ref().unwrap();
                let step = gp.matmul(&off.unsqueeze(2)?)?.squeeze(2)?;
                joints[k] = Some((joints[p].as_ref().unwrap() + step)?);
                rest[k] = Some((rest[p].as_ref().unwrap() + off)?);
                global[k] = Some(gp.matmul(&rot)?);
            }
        }
        let stack = |v: Vec<Option<Tensor>>| -> candle_core::Result<Tensor> {
            Tensor::stack(&v.into_iter().map(Option::unwrap).collect::<Vec<_>>(), 1)
        };
        let joints = stack(joints)?; // [B, J, 3]
        let rest = stack(rest)?; // [B, J, 3]
        let global = stack(global)?.contiguous()?; // [B, J, 3, 3]

        let anchors = to_t(anchors, &[v, j])?;
        let local = to_t(local, &[1, v, 3])?;
        let rest_v = anchors.broadcast_matmul(&rest)?.broadcast_add(&local)?; // [B, V, 3]
        // diff[b, j, c, v] = rest_v[b, v, c] - rest[b, j, c]
        let diff = rest_v
            .transpose(1, 2)?
            .unsqueeze(1)?
            .broadcast_sub(&rest.unsqueeze(3)?)?; // [B, J, 3, V]
        let moved = global.matmul(&diff.contiguous()?)?.broadcast_add(&joints.unsqueeze(3)?)?; // [B, J, 3, V]
        let weights = to_t(weights, &[v, j])?;
        let verts = moved
            .permute((0, 3, 2, 1))? // [B, V, 3, J]
            .broadcast_mul(&weights.unsqueeze(1)?)?
            .sum(D::Minus1)?;
        Ok((joints, verts))
    }

    fn forward(&self, params: &BodyParams) -> Result<(JointSet, Array3<f32>)> {
        let (t, j) = (params.frames(), params.joint_count());
        if j != self.joint_count() {
            return Err(Error::Shape(format!(
                "params carry {j} rotations, model has {} joints",
                self.joint_count()
            )));
        }
        let v = self.vertex_count();
        let mut joints = Array3::<f32>::zeros((t, j, 3));
        let mut verts = Array3::<f32>::zeros((t, v, 3));
        for f in 0..t {
            let rots: Vec<Mat3> = (0..j)
                .map(|k| {
                    let mut m = [[0.0; 3]; 3];
                    for r in 0..3 {
                        for c in 0..3 {
                            m[r][c] = params.theta[[f, k, r, c]] as f64;
                        }
                    }
                    m
                })
                .collect();
            let beta: Vec<f64> = params.beta.row(f).iter().map(|&x| x as f64).collect();
            let gamma = [0, 1, 2].map(|c| params.gamma[[f, c]] as f64);
            let posed = self.pose(&rots, &beta, gamma)?;
            for k in 0..j {
                for c in 0..3 {
                    joints[[f, k, c]] = posed.joints[k][c] as f32;
                }
            }
            for k in 0..v {
                for c in 0..3 {
                    verts[[f, k, c]] = posed.vertices[k][c] as f32;
                }
            }
        }
        Ok((JointSet::new(joints, self.skeleton.clone())?, verts))
    }
}

/// Converts `[T × J × 3 × 3]` rotations to per-frame matrix lists.
pub fn theta_to_mats(theta: &Array4<f32>, frame: usize) -> Vec<Mat3> {
    let j = theta.dim().1;
    (0..j)
        .map(|k| {
            let mut m = [[0.0; 3]; 3];
            for r in 0..3 {
                for c in 0..3 {
                    m[r][c] = theta[[frame, k, r, c]] as f64;
                }
            }
            m
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{axis_angle_to_matrix, IDENTITY};
    use candle_core::{DType, Device};

    #[test]
    fn toy_spec_dimensions() {
        let m = ToyBodyModel::new().unwrap();
        assert_eq!(m.joint_count(), 22);
        assert_eq!(m.vertex_count(), 200);
    }

    #[test]
    fn rest_pose_accumulates_offsets() {
        let m = ToyBodyModel::new().unwrap();
        let posed = m.pose(&vec![IDENTITY; 22], &[0.0; 10], [0.0; 3]).unwrap();
        // left_wrist = pelvis → spine1 → spine2 → spine3 → left_collar → left_shoulder → left_elbow → left_wrist
        let chain = [3, 6, 9, 13, 16, 18, 20];
        let mut expect = [0.0; 3];
        for k in chain {
            for c in 0..3 {
                expect[c] += TOY_OFFSETS[k][c];
            }
        }
        for c in 0..3 {
            assert!((posed.joints[20][c] - expect[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn translation_shifts_everything() {
        let m = ToyBodyModel::new().unwrap();
        let rots: Vec<Mat3> = (0..22).map(|k| axis_angle_to_matrix([0.1 * k as f64, -0.05, 0.2])).collect();
        let beta = [0.3, -0.2, 0.1, 0.0, 0.5, 0.0, 0.0, 0.1, 0.0, -0.4];
        let a = m.pose(&rots, &beta, [0.0; 3]).unwrap();
        let b = m.pose(&rots, &beta, [1.0, 0.0, 0.0]).unwrap();
        for (p, q) in a.joints.iter().zip(&b.joints).chain(a.vertices.iter().zip(&b.vertices)) {
            assert!((q[0] - p[0] - 1.0).abs() < 1e-12 && q[1] == p[1] && q[2] == p[2]);
        }
    }

    #[test]
    fn three_joint_chain_quarter_turn() {
        let spec = BodyModelSpec {
            joint_names: vec!["root".into(), "mid".into(), "leaf".into()],
            parents: vec![-1, 0, 1],
            rest_offsets: vec![[0.0; 3], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            vertex_weights: vec![vec![(2, 1.0)]],
            vertex_anchors: vec![vec![(2, 1.0)]],
            vertex_local: vec![[0.0, 0.5, 0.0]],
            vertex_normals: vec![[0.0, 1.0, 0.0]],
            shape_basis: vec![vec![[0.0; 3]; 3]; 10],
        };
        let m = ToyBodyModel::from_spec(spec).unwrap();
        let rz = axis_angle_to_matrix([0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        let posed = m.pose(&[rz, IDENTITY, IDENTITY], &[0.0; 10], [0.0; 3]).unwrap();
        // Root quarter turn about z maps +x to +y: leaf at (0, 2, 0).
        let leaf = posed.joints[2];
        assert!(leaf[0].abs() < 1e-12 && (leaf[1] - 2.0).abs() < 1e-12 && leaf[2].abs() < 1e-12);
        // The vertex rides rigidly with the leaf: local (0, 0.5, 0) → (−0.5, 0, 0) offset.
        let v = posed.vertices[0];
        assert!((v[0] + 0.5).abs() < 1e-12 && (v[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cyclic_parents_rejected() {
        let mut spec = toy_spec();
        spec.parents[0] = 3;
        assert!(ToyBodyModel::from_spec(spec).is_err());
        let mut spec = toy_spec();
        spec.vertex_weights[0] = vec![(0, 0.5)];
        assert!(ToyBodyModel::from_spec(spec).is_err());
    }

    #[test]
    fn tensor_forward_matches_plain_forward() {
        let m = ToyBodyModel::new().unwrap();
        let rots: Vec<Mat3> = (0..22)
            .map(|k| axis_angle_to_matrix([0.07 * k as f64, 0.3, -0.02 * k as f64]))
            .collect();
        let beta = [0.5, -0.2, 0.1, 0.3, -0.5, 0.2, 0.0, 0.1, 0.7, -0.4];
        let gamma = [0.2, -0.1, 3.0];
        let posed = m.pose(&rots, &beta, gamma).unwrap();
        let dev = Device::Cpu;
        let theta = Tensor::from_vec(rots.iter().flatten().flatten().copied().collect::<Vec<f64>>(), (1, 22, 3, 3), &dev).unwrap();
        let beta_t = Tensor::from_vec(beta.to_vec(), (1, 10), &dev).unwrap();
        let gamma_t = Tensor::from_vec(gamma.to_vec(), (1, 3), &dev).unwrap();
        let (j, v) = m.forward_tensors(&theta, &beta_t, &gamma_t).unwrap();
        assert_eq!(j.dtype(), DType::F64);
        let j: Vec<f64> = j.flatten_all().unwrap().to_vec1().unwrap();
        let v: Vec<f64> = v.flatten_all().unwrap().to_vec1().unwrap();
        for (a, b) in j.iter().zip(posed.joints.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in v.iter().zip(posed.vertices.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn limb_sets() {
        let (u, l) = limb_index_sets(&toy_skeleton()).unwrap();
        assert_eq!(u, vec![16, 17, 18, 19, 20, 21]);
        assert_eq!(l, vec![1, 2, 4, 5, 7, 8]);
        let s17 = skeleton_17();
        let (u, l) = limb_index_sets(&s17).unwrap();
        assert_eq!(u, vec![11, 12, 13, 14, 15, 16]);
        assert_eq!(l, vec![1, 2, 3, 4, 5, 6]);
        let unnamed = Skeleton::new(vec!["a".into(), "b".into()], vec![], vec![]).unwrap();
        assert!(limb_index_sets(&unnamed).is_err());
    }
}
