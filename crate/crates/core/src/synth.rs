//! Deterministic synthetic data: the pendulum comparison traces and a
//! projected 3D motion dataset for lifting experiments.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::pose::PoseSequence;
use crate::skeleton::SkeletonTopology;

/// Ground truth plus three estimates with equal mean absolute error.
#[derive(Debug, Clone, PartialEq)]
pub struct PendulumTraces {
    pub gt: PoseSequence,
    /// Smooth and similar: the ground truth with a phase lag.
    pub a: PoseSequence,
    /// Smooth but with a different tendency: residual at twice the frequency.
    pub b: PoseSequence,
    /// Ground truth plus an alternating-sign perturbation.
    pub c: PoseSequence,
    /// Shared mean absolute distance to the ground truth.
    pub distance: f64,
    /// Phase lag of trace A, in frames.
    pub lag: f64,
}

impl PendulumTraces {
    pub fn traces(&self) -> [(&'static str, &PoseSequence); 3] {
        [("A", &self.a), ("B", &self.b), ("C", &self.c)]
    }
}

fn mean_abs(r: &[f64]) -> f64 {
    r.iter().map(|v| v.abs()).sum::<f64>() / r.len() as f64
}

/// One-dimensional pendulum traces, each `(frames, 1, 1)`.
pub fn gen_pendulum(frames: usize, amplitude: f64, period: f64, seed: u64) -> Result<PendulumTraces> {
    if !(amplitude > 0.0 && amplitude.is_finite()) || !(period >= 4.0 && period.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "amplitude {amplitude} must be positive and period {period} at least 4 frames"
        )));
    }
    if (frames as f64) < 2.0 * period {
        return Err(Error::InvalidParams(format!(
            "{frames} frames do not cover two periods of {period}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lag = rng.random_range(period / 16.0..=period / 4.0);
    let w = 2.0 * PI / period;
    let gt: Vec<f64> = (0..frames).map(|t| amplitude * libm::sin(w * t as f64)).collect();
    let ra: Vec<f64> = (0..frames)
        .map(|t| amplitude * libm::sin(w * (t as f64 - lag)) - gt[t])
        .collect();
    let d = mean_abs(&ra);
    let rb_raw: Vec<f64> = (0..frames)
        .map(|t| amplitude * libm::sin(2.0 * w * t as f64) - gt[t])
        .collect();
    let beta = d / mean_abs(&rb_raw);
    let seq = |r: &dyn Fn(usize) -> f64| PoseSequence::from_fn(frames, 1, 1, |t, _, _| gt[t] + r(t));
    Ok(PendulumTraces {
        a: seq(&|t| ra[t]),
        b: seq(&|t| beta * rb_raw[t]),
        c: seq(&|t| if t % 2 == 0 { d } else { -d }),
        gt: seq(&|_| 0.0),
        distance: d,
        lag,
    })
}

/// Mean absolute distance between two traces.
pub fn mean_l1(a: &PoseSequence, b: &PoseSequence) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data().len() as f64
}

/// Pinhole camera. 3D points are given root-relative in camera axes and
/// shifted by `root_position` before projection.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct Camera {
    pub focal: f64,
    pub principal: [f64; 2],
    pub root_position: [f64; 3],
}

impl Default for Camera {
    /// Focal length equal to the subject distance, so one pixel is about
    /// one millimetre at the root.
    fn default() -> Self {
        Self {
            focal: 5000.0,
            principal: [500.0, 500.0],
            root_position: [0.0, 0.0, 5000.0],
        }
    }
}

impl Camera {
    pub fn project(&self, s: &PoseSequence) -> Result<PoseSequence> {
        if s.dims() != 3 {
            return Err(Error::DimensionError { expected: 3, got: s.dims() });
        }
        let mut out = PoseSequence::zeros(s.frames(), s.joints(), 2);
        for t in 0..s.frames() {
            for j in 0..s.joints() {
                let p = s.point(t, j);
                let [x, y, z] = [0, 1, 2].map(|k| p[k] + self.root_position[k]);
                if !(z > 0.0) {
                    return Err(Error::PointBehindCamera(z));
                }
                let uv = out.point_mut(t, j);
                uv[0] = self.focal * x / z + self.principal[0];
                uv[1] = self.focal * y / z + self.principal[1];
            }
        }
        Ok(out)
    }
}

/// Parameters of the synthetic lifting dataset.
///
/// Every sequence animates a fixed-bone-length rig: each non-root joint
/// rotates about all three axes with angles that are sums of sinusoids, and
/// the whole body turns about the vertical axis. Each action has its own
/// base frequency and per-joint amplitude profile; sequences of one action
/// differ in phases and amplitude jitter.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct SynthMotionSpec {
    pub actions: usize,
    pub sequences_per_action: usize,
    pub frames: usize,
    pub fps: f64,
    /// Sinusoids per joint angle (harmonics of the action's base frequency).
    pub components: usize,
    /// Largest joint-angle amplitude in radians.
    pub max_angle: f64,
    /// Base frequencies are drawn from this range (Hz).
    pub frequency_range: [f64; 2],
    /// Amplitude multiplier for the two non-dominant axes of each joint.
    pub secondary_axis_scale: f64,
    /// Each action fixes a phase per joint angle; sequences perturb it by a
    /// uniform offset in `[-phase_jitter, phase_jitter]` radians.
    pub phase_jitter: f64,
    /// Initial heading is drawn from `[-yaw_range, yaw_range]` radians.
    pub yaw_range: f64,
    /// Heading drift is drawn from `[-yaw_rate, yaw_rate]` rad/s.
    pub yaw_rate: f64,
    pub camera: Camera,
    /// Standard deviation of the 2D Gaussian noise, in pixels.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthMotionSpec {
    fn default() -> Self {
        Self {
            actions: 4,
            sequences_per_action: 6,
            frames: 160,
            fps: 50.0,
            components: 2,
            max_angle: 0.6,
            frequency_range: [0.4, 1.2],
            secondary_axis_scale: 0.25,
            phase_jitter: 0.3,
            yaw_range: 0.8,
            yaw_rate: 0.2,
            camera: Camera::default(),
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl SynthMotionSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.frequency_range;
        let ok = self.actions > 0
            && self.sequences_per_action > 0
            && self.frames >= 2
            && self.fps > 0.0
            && self.components > 0
            && lo > 0.0
            && hi >= lo
            && self.noise_sigma >= 0.0
            && self.secondary_axis_scale >= 0.0
            && self.phase_jitter >= 0.0
            && self.yaw_range >= 0.0
            && self.yaw_rate >= 0.0
            && self.camera.focal > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("invalid synthetic motion spec {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub action: String,
    /// Noisy 2D projection in pixels.
    pub pose2d: PoseSequence,
    /// Root-relative 3D pose in millimetres, camera axes.
    pub pose3d: PoseSequence,
}

type Mat3 = [[f64; 3]; 3];

fn matmul3(a: &Mat3, b: &Mat3) -> Mat3 {
    core::array::from_fn(|r| core::array::from_fn(|c| (0..3).map(|k| a[r][k] * b[k][c]).sum()))
}

fn apply3(a: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    core::array::from_fn(|r| (0..3).map(|k| a[r][k] * v[k]).sum())
}

fn rotation_xyz(ax: f64, ay: f64, az: f64) -> Mat3 {
    let (sx, cx) = (libm::sin(ax), libm::cos(ax));
    let (sy, cy) = (libm::sin(ay), libm::cos(ay));
    let (sz, cz) = (libm::sin(az), libm::cos(az));
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    matmul3(&rz, &matmul3(&ry, &rx))
}

/// Bone offsets (mm, y up) from each joint's parent in the rest pose.
fn rest_offsets(topo: &SkeletonTopology, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    if *topo == SkeletonTopology::h36m17() {
        return vec![
            [0.0, 0.0, 0.0],
            [-130.0, 0.0, 0.0],
            [0.0, -440.0, 0.0],
            [0.0, -440.0, 0.0],
            [130.0, 0.0, 0.0],
            [0.0, -440.0, 0.0],
            [0.0, -440.0, 0.0],
            [0.0, 230.0, 0.0],
            [0.0, 250.0, 0.0],
            [0.0, 100.0, 0.0],
            [0.0, 120.0, 0.0],
            [150.0, -20.0, 0.0],
            [0.0, -280.0, 0.0],
            [0.0, -250.0, 0.0],
            [-150.0, -20.0, 0.0],
            [0.0, -280.0, 0.0],
            [0.0, -250.0, 0.0],
        ];
    }
    (0..topo.num_joints())
        .map(|j| {
            if j == topo.root() {
                [0.0; 3]
            } else {
                core::array::from_fn(|_| rng.random_range(-200.0..200.0))
            }
        })
        .collect()
}

struct ActionStyle {
    frequency: f64,
    /// Per joint, per axis amplitude (radians).
    amplitude: Vec<[f64; 3]>,
    /// Per joint, per axis, per harmonic phase.
    phase: Vec<[Vec<f64>; 3]>,
}

/// Order in which forward kinematics visits joints (parents first).
fn fk_order(topo: &SkeletonTopology) -> Vec<usize> {
    let h = topo.hop_distances();
    let mut order: Vec<usize> = (0..topo.num_joints()).collect();
    order.sort_by_key(|&j| (h.get(j), j));
    order
}

/// Generates the dataset, ordered action by action.
pub fn gen_lifting_dataset(topo: &SkeletonTopology, spec: &SynthMotionSpec) -> Result<Vec<SynthSequence>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rest = rest_offsets(topo, &mut rng);
    let parents = topo.parents();
    let order = fk_order(topo);
    let m = topo.num_joints();
    let styles: Vec<ActionStyle> = (0..spec.actions)
        .map(|_| ActionStyle {
            frequency: rng.random_range(spec.frequency_range[0]..=spec.frequency_range[1]),
            amplitude: (0..m)
                .map(|_| {
                    let dominant = rng.random_range(0..3);
                    core::array::from_fn(|axis| {
                        let a = spec.max_angle * rng.random_range(0.2..=1.0);
                        if axis == dominant { a } else { a * spec.secondary_axis_scale }
                    })
                })
                .collect(),
            phase: (0..m)
                .map(|_| core::array::from_fn(|_| (0..spec.components).map(|_| rng.random_range(0.0..2.0 * PI)).collect()))
                .collect(),
        })
        .collect();
    // Separate stream so the motions do not depend on the noise level.
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(1);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidParams(format!("{e}")))?;

    let mut out = Vec::with_capacity(spec.actions * spec.sequences_per_action);
    for (a, style) in styles.iter().enumerate() {
        for _ in 0..spec.sequences_per_action {
            // angle[j][axis][component] = (amplitude, frequency, phase)
            let offset = rng.random_range(0.0..2.0 * PI);
            let waves: Vec<[Vec<(f64, f64, f64)>; 3]> = (0..m)
                .map(|j| {
                    core::array::from_fn(|axis| {
                        (1..=spec.components)
                            .map(|k| {
                                let amp = style.amplitude[j][axis] * rng.random_range(0.7..=1.3) / k as f64;
                                let freq = style.frequency * k as f64 * rng.random_range(0.9..=1.1);
                                let jitter = if spec.phase_jitter > 0.0 {
                                    rng.random_range(-spec.phase_jitter..=spec.phase_jitter)
                                } else {
                                    0.0
                                };
                                (amp, freq, style.phase[j][axis][k - 1] + k as f64 * offset + jitter)
                            })
                            .collect()
                    })
                })
                .collect();
            let yaw0 = rng.random_range(-spec.yaw_range..=spec.yaw_range);
            let yaw_rate = rng.random_range(-spec.yaw_rate..=spec.yaw_rate);
            let angle = |j: usize, axis: usize, time: f64| -> f64 {
                waves[j][axis]
                    .iter()
                    .map(|&(amp, f, ph)| amp * libm::sin(2.0 * PI * f * time + ph))
                    .sum()
            };

            let mut pose3d = PoseSequence::zeros(spec.frames, m, 3);
            for t in 0..spec.frames {
                let time = t as f64 / spec.fps;
                let mut global: Vec<Mat3> = vec![[[0.0; 3]; 3]; m];
                let mut pos: Vec<[f64; 3]> = vec![[0.0; 3]; m];
                for &j in &order {
                    let local = rotation_xyz(angle(j, 0, time), angle(j, 1, time), angle(j, 2, time));
                    match parents[j] {
                        None => {
                            let yaw = yaw0 + yaw_rate * time;
                            global[j] = matmul3(&rotation_xyz(0.0, yaw, 0.0), &rotation_xyz(0.2 * angle(j, 0, time), 0.0, 0.2 * angle(j, 2, time)));
                        }
                        Some(p) => {
                            let bone = apply3(&global[p], &rest[j]);
                            pos[j] = core::array::from_fn(|k| pos[p][k] + bone[k]);
                            global[j] = matmul3(&global[p], &local);
                        }
                    }
                }
                for j in 0..m {
                    // camera axes: x right, y down, z forward
                    let p = pos[j];
                    pose3d.point_mut(t, j).copy_from_slice(&[p[0], -p[1], p[2]]);
                }
            }
            let mut pose2d = spec.camera.project(&pose3d)?;
            if spec.noise_sigma > 0.0 {
                pose2d.data_mut().iter_mut().for_each(|v| *v += noise.sample(&mut noise_rng));
            }
            out.push(SynthSequence {
                action: format!("action{a}"),
                pose2d,
                pose3d,
            });
        }
    }
    Ok(out)
}
