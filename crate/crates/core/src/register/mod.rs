//! Rigid 3D-2D registration: PnP solvers, render-and-compare optimizers,
//! initialization strategies and the multi-start driver.

mod blur;
mod chamfer;
mod correspondence;
mod descent;
mod init;
mod landmark;
mod multistart;
mod pnp;
mod silhouette;

pub use chamfer::{chamfer_register, chamfer_run, refine_on_correspondences};
pub use correspondence::{curve_correspondences, order_along_principal_axis};
pub use init::{average_poses, base_rotation, init_canonical_pose, init_random_pose, restart_seed};
pub use landmark::{landmark_render_register, landmark_render_run};
pub use multistart::{multi_start, multi_start_from, restart_inits, MultiStart};
pub use pnp::{pnp_ransac_register, pnp_ransac_with_recompute, pnp_register, RansacOutcome};
pub use silhouette::silhouette_register;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Point2, Point3, RigidPose};
use crate::meshproc::{LabelledMesh, LandmarkSet3D};
use crate::render::{LandmarkMap2D, SoftMask, DEFAULT_RENDER_SCALE};

/// A model point and its observed (undistorted) image position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub p3: Point3,
    pub p2: Point2,
}

impl Correspondence {
    pub fn new(p3: Point3, p2: Point2) -> Self {
        Self { p3, p2 }
    }
}

/// Everything a render-and-compare optimizer registers against.
#[derive(Debug, Clone)]
pub struct RegistrationProblem {
    pub mesh: LabelledMesh,
    pub landmarks3d: LandmarkSet3D,
    pub target2d: LandmarkMap2D,
    pub silhouette_target: Option<SoftMask>,
    pub intr: CameraIntrinsics,
}

impl RegistrationProblem {
    pub fn new(mesh: LabelledMesh, landmarks3d: LandmarkSet3D, target2d: LandmarkMap2D, intr: CameraIntrinsics) -> Result<Self> {
        intr.validate()?;
        landmarks3d.validate(mesh.vertex_count())?;
        if !target2d.matches_camera(&intr) {
            return Err(Error::InvalidArgument(format!(
                "target map is {}x{} but the camera is {}x{}",
                target2d.width(),
                target2d.height(),
                intr.width,
                intr.height
            )));
        }
        Ok(Self {
            mesh,
            landmarks3d,
            target2d,
            silhouette_target: None,
            intr,
        })
    }

    /// Attaches a liver-region mask at camera resolution.
    pub fn with_silhouette(mut self, mask: SoftMask) -> Result<Self> {
        if mask.width() != self.intr.width as usize || mask.height() != self.intr.height as usize {
            return Err(Error::InvalidArgument(format!(
                "silhouette mask is {}x{} but the camera is {}x{}",
                mask.width(),
                mask.height(),
                self.intr.width,
                self.intr.height
            )));
        }
        self.silhouette_target = Some(mask);
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub pose: RigidPose,
    pub final_loss: f64,
    /// Loss before the first step followed by the loss after each iteration.
    pub loss_trace: Vec<f64>,
    pub restart_index: usize,
    pub converged: bool,
    pub seed: u64,
}

/// How a gradient becomes a pose update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Each gradient block is normalized to the scheduled length; a step is kept only if it
    /// lowers the loss, with halving on failure.
    #[default]
    Normalized,
    /// Per-coordinate moment estimates scale the scheduled lengths; every step is taken and
    /// the lowest-loss iterate is returned.
    Adam,
}

/// Step lengths of gradient descent, decaying linearly to `final_fraction` of their
/// initial value by the last iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    /// Radians.
    pub rotation: f64,
    /// Millimetres.
    pub translation: f64,
    pub final_fraction: f64,
    #[serde(default)]
    pub rule: StepRule,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            rotation: 0.02,
            translation: 5.0,
            final_fraction: 0.1,
            rule: StepRule::Normalized,
        }
    }
}

impl StepSchedule {
    /// Multiplier of the initial steps at iteration `k` of `n`.
    pub fn fraction(&self, k: usize, n: usize) -> f64 {
        if n <= 1 {
            return 1.0;
        }
        1.0 - (1.0 - self.final_fraction) * k as f64 / (n - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub ligament: f64,
    pub ridge: f64,
    pub silhouette: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self {
            ligament: 5.0,
            ridge: 1.0,
            silhouette: 0.5,
        }
    }
}

/// Settings specific to the landmark-map optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkRenderConfig {
    /// Disc radius of rendered landmark vertices, render-resolution pixels.
    pub splat_radius: f64,
    /// Edge softness of the rendered discs, render-resolution pixels.
    pub splat_softness: f64,
    /// Gaussian widths (render-resolution pixels) at which maps are compared; the loss
    /// sums the squared error over all of them.
    pub blur_scales: Vec<f64>,
    /// Rounds of lateral translation matching the ligament centroids.
    pub prealign_rounds: usize,
}

impl Default for LandmarkRenderConfig {
    fn default() -> Self {
        Self {
            splat_radius: 0.4,
            splat_softness: 0.25,
            blur_scales: vec![1.0, 3.0, 8.0],
            prealign_rounds: 3,
        }
    }
}

/// Settings specific to the two-phase Chamfer optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChamferConfig {
    /// Iterations of the frozen-correspondence refinement.
    pub refine_iterations: usize,
    /// Weight of the Chamfer term against the silhouette image term.
    pub lambda: f64,
    /// Cap on target pixels sampled for the reverse Chamfer direction.
    pub reverse_samples: usize,
    /// Starting pose; `None` means identity rotation at 500 mm depth.
    #[serde(skip)]
    pub initial_pose: Option<RigidPose>,
}

impl Default for ChamferConfig {
    fn default() -> Self {
        Self {
            refine_iterations: 25,
            lambda: 1.0,
            reverse_samples: 2048,
            initial_pose: None,
        }
    }
}

impl ChamferConfig {
    pub fn start_pose(&self) -> RigidPose {
        self.initial_pose
            .unwrap_or_else(|| RigidPose::from_translation(nalgebra::Vector3::new(0.0, 0.0, 500.0)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub step: StepSchedule,
    pub weights: ClassWeights,
    pub restarts: usize,
    pub render_scale: f64,
    /// Soft silhouette sigmoid width, render-resolution pixels.
    pub softness: f64,
    /// Fraction of pixels entering each iteration's loss; 1 uses every pixel.
    pub pixel_fraction: f64,
    pub seed: u64,
    /// Depth range (mm) of random initial poses.
    pub depth_range: (f64, f64),
    pub landmark: LandmarkRenderConfig,
    pub chamfer: ChamferConfig,
    pub canonical_pose: Option<RigidPose>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iterations: 150,
            step: StepSchedule::default(),
            weights: ClassWeights::default(),
            restarts: 30,
            render_scale: DEFAULT_RENDER_SCALE,
            softness: 1.0,
            pixel_fraction: 1.0,
            seed: 0,
            depth_range: (300.0, 800.0),
            landmark: LandmarkRenderConfig::default(),
            chamfer: ChamferConfig::default(),
            canonical_pose: None,
        }
    }
}

impl OptimizerConfig {
    /// Defaults of the landmark-map optimizer: 150 iterations, 30 restarts.
    pub fn landmark_render() -> Self {
        Self {
            step: StepSchedule {
                rule: StepRule::Adam,
                ..StepSchedule::default()
            },
            ..Self::default()
        }
    }

    /// Defaults of the two-phase Chamfer optimizer: 100 + 25 iterations, one start.
    pub fn chamfer() -> Self {
        Self {
            iterations: 100,
            restarts: 1,
            ..Self::default()
        }
    }

    /// Defaults of the silhouette optimizer: 200 iterations, one start.
    pub fn silhouette() -> Self {
        Self {
            iterations: 200,
            restarts: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if [w.ligament, w.ridge, w.silhouette].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument("class weights must be non-negative".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("at least one restart is required".into()));
        }
        if !(self.render_scale > 0.0 && self.render_scale <= 1.0) {
            return Err(Error::InvalidArgument(format!("render scale must be in (0, 1], got {}", self.render_scale)));
        }
        if !(self.softness > 0.0) {
            return Err(Error::InvalidArgument("softness must be positive".into()));
        }
        if !(self.pixel_fraction > 0.0 && self.pixel_fraction <= 1.0) {
            return Err(Error::InvalidArgument("pixel fraction must be in (0, 1]".into()));
        }
        let s = &self.step;
        if !(s.rotation > 0.0 && s.translation > 0.0 && s.final_fraction > 0.0 && s.final_fraction <= 1.0) {
            return Err(Error::InvalidArgument("step schedule must be positive".into()));
        }
        let (lo, hi) = self.depth_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::InvalidArgument(format!("invalid depth range [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Render-and-compare optimizers that [`multi_start`] can drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Silhouette,
    LandmarkRender,
    Chamfer,
}
