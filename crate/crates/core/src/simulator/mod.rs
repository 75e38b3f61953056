//! Quasi-static uniaxial crushing of a bonded-cell particle.
//!
//! Cells carry translational degrees of freedom only. Shared faces are
//! cohesive bonds with a bilinear mixed-mode law; a broken bond becomes a
//! compression-only penalty contact with Coulomb friction, and so does the
//! seated contact between each platen and the cells it touches. The upper
//! platen advances by a fixed increment per step. Each step solves
//! equilibrium with damage frozen, then updates damage and re-solves at the
//! same platen position until no bond changes.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Clipped, Mat3, Plane, Vec3};
use crate::geometry::polygon_area;
use crate::tessellation::FragmentMesh;

mod sparse;

use sparse::{BlockMatrix, BlockPattern};

pub const RECORD_SCHEMA: &str = "crushgraph.crush/1";

/// Fraction of the running peak the force must fall by for a valid test.
pub const VALID_DROP: f64 = 0.35;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("mesh adjacency is disconnected ({0} components)")]
    DisconnectedMesh(usize),
    #[error("record is invalid: the force never fell 35% below its peak")]
    InvalidRecord,
    #[error("invalid cohesive parameters: {0}")]
    InvalidParams(String),
    #[error("equilibrium did not converge at step {step}")]
    NonConvergence { step: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn unit(self) -> Vec3 {
        match self {
            Axis::X => Vec3::x(),
            Axis::Y => Vec3::y(),
            Axis::Z => Vec3::z(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "X",
            Axis::Y => "Y",
            Axis::Z => "Z",
        }
    }

    pub fn parse(s: &str) -> Option<Axis> {
        match s.trim().to_ascii_uppercase().as_str() {
            "X" => Some(Axis::X),
            "Y" => Some(Axis::Y),
            "Z" => Some(Axis::Z),
            _ => None,
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Cohesive-zone parameters as tabulated. Fracture energies are stored in
/// the tabulated J/m^2 and converted to N/mm (x 1e-3) where used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CzmParams {
    /// Normal penalty stiffness, N/mm^3.
    pub k_i: f64,
    /// Tangential penalty stiffness, N/mm^3.
    pub k_ii: f64,
    /// Normal strength, MPa.
    pub sigma_i: f64,
    /// Shear strength, MPa.
    pub sigma_ii: f64,
    /// Mode-I fracture energy, J/m^2.
    pub g_i: f64,
    /// Mode-II fracture energy, J/m^2.
    pub g_ii: f64,
    pub mu: f64,
    /// Density, kg/m^3. Carried for completeness; a quasi-static solve has no inertia.
    pub rho: f64,
}

impl Default for CzmParams {
    fn default() -> Self {
        Self {
            k_i: 80.0,
            k_ii: 120.0,
            sigma_i: 9.0,
            sigma_ii: 11.5,
            g_i: 900.0,
            g_ii: 1125.0,
            mu: 0.3,
            rho: 2650.0,
        }
    }
}

impl CzmParams {
    /// Mode-I fracture energy in N/mm (= mJ/mm^2).
    pub fn g_i_n_per_mm(&self) -> f64 {
        self.g_i * 1e-3
    }

    pub fn g_ii_n_per_mm(&self) -> f64 {
        self.g_ii * 1e-3
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let all = [
            self.k_i, self.k_ii, self.sigma_i, self.sigma_ii, self.g_i, self.g_ii, self.rho,
        ];
        if all.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(SimError::InvalidParams("all parameters must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(SimError::InvalidParams(format!("mu {} outside [0, 1]", self.mu)));
        }
        for (g, s, k, mode) in [
            (self.g_i_n_per_mm(), self.sigma_i, self.k_i, "I"),
            (self.g_ii_n_per_mm(), self.sigma_ii, self.k_ii, "II"),
        ] {
            if 2.0 * g / s <= s / k {
                return Err(SimError::InvalidParams(format!(
                    "mode {mode}: softening displacement {} does not exceed elastic limit {}",
                    2.0 * g / s,
                    s / k
                )));
            }
        }
        Ok(())
    }

    /// Onset and failure equivalent displacements plus equivalent stiffness
    /// and fracture energy for a given opening/sliding split.
    fn envelope(&self, opening: f64, sliding: f64) -> Option<Envelope> {
        let m = opening.hypot(sliding);
        if m <= 0.0 {
            return None;
        }
        let (c, s) = (opening / m, sliding / m);
        let onset = 1.0 / ((self.k_i * c / self.sigma_i).powi(2) + (self.k_ii * s / self.sigma_ii).powi(2)).sqrt();
        let stiffness = self.k_i * c * c + self.k_ii * s * s;
        let beta = self.k_ii * s * s / stiffness;
        let g = self.g_i_n_per_mm() + (self.g_ii_n_per_mm() - self.g_i_n_per_mm()) * beta;
        let failure = (2.0 * g / (stiffness * onset)).max(onset * (1.0 + 1e-9));
        Some(Envelope {
            equivalent: m,
            onset,
            failure,
            stiffness,
            energy: g,
        })
    }
}

struct Envelope {
    equivalent: f64,
    onset: f64,
    failure: f64,
    stiffness: f64,
    energy: f64,
}

/// Cohesive bond on the face shared by cells `i` and `j`. The normal points
/// from `i` to `j`; opening is the normal part of `u_j - u_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub area: f64,
    pub centroid: Vec3,
    pub normal: Vec3,
    pub damage: f64,
    pub broken: bool,
    /// Largest equivalent separation reached, mm.
    pub kappa: f64,
    /// Energy dissipated so far, N mm.
    pub dissipated: f64,
}

impl Bond {
    pub fn new(i: usize, j: usize, area: f64, centroid: Vec3, normal: Vec3) -> Self {
        Self {
            i,
            j,
            area,
            centroid,
            normal,
            damage: 0.0,
            broken: false,
            kappa: 0.0,
            dissipated: 0.0,
        }
    }

    fn split(&self, delta: &Vec3) -> (f64, Vec3) {
        let dn = self.normal.dot(delta);
        (dn, delta - self.normal * dn)
    }

    /// Force on cell `j` for relative displacement `delta = u_j - u_i` at the
    /// current (frozen) damage. Compression sees the undamaged penalty `kc`
    /// (N/mm^3) instead of the cohesive stiffness.
    pub fn force(&self, delta: &Vec3, czm: &CzmParams, kc: f64) -> Vec3 {
        let (dn, dt) = self.split(delta);
        let (kn, kt) = self.stiffness(dn > 0.0, czm, kc);
        -(self.normal * (kn * dn) + dt * kt)
    }

    fn stiffness(&self, tension: bool, czm: &CzmParams, kc: f64) -> (f64, f64) {
        let kn = if tension { (1.0 - self.damage) * czm.k_i } else { kc } * self.area;
        (kn, (1.0 - self.damage) * czm.k_ii * self.area)
    }

    fn energy(&self, delta: &Vec3, czm: &CzmParams, kc: f64) -> f64 {
        let (dn, dt) = self.split(delta);
        let (kn, kt) = self.stiffness(dn > 0.0, czm, kc);
        0.5 * kn * dn * dn + 0.5 * kt * dt.norm_squared()
    }

    /// Advances damage for the separation `delta`; returns the damage increment.
    pub fn update_damage(&mut self, delta: &Vec3, czm: &CzmParams) -> f64 {
        if self.broken {
            return 0.0;
        }
        let (dn, dt) = self.split(delta);
        let Some(env) = czm.envelope(dn.max(0.0), dt.norm()) else {
            return 0.0;
        };
        self.kappa = self.kappa.max(env.equivalent);
        if self.kappa <= env.onset {
            return 0.0;
        }
        let d = if self.kappa >= env.failure {
            1.0
        } else {
            (env.failure * (self.kappa - env.onset) / (self.kappa * (env.failure - env.onset))).clamp(0.0, 1.0)
        };
        let before = self.damage;
        if d > self.damage {
            self.damage = d;
        }
        if self.damage >= 1.0 - 1e-9 {
            self.damage = 1.0;
            self.broken = true;
            self.dissipated = env.energy * self.area;
        } else {
            let per_area = 0.5 * env.onset * env.stiffness * self.kappa * self.damage;
            self.dissipated = self.dissipated.max(per_area * self.area);
        }
        self.damage - before
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadControl {
    /// Platen increment per step as a fraction of the initial platen gap.
    pub step_rel: f64,
    pub max_steps: usize,
    /// Seating depth at each end as a fraction of the particle extent.
    pub seat_rel: f64,
    /// Compressive penalty as a multiple of `k_i`. Large values approach
    /// non-penetration; applies to platens, broken faces and intact bonds.
    pub compression_penalty: f64,
    /// Fixed-point iterations per equilibrium solve.
    pub max_iters: usize,
    /// Damage re-solves per step.
    pub max_cascade: usize,
    /// Relative change in friction forces accepted as converged.
    pub friction_tol: f64,
    /// Equilibrium residual relative to the load level.
    pub eq_tol: f64,
}

impl Default for LoadControl {
    fn default() -> Self {
        Self {
            step_rel: 1e-3,
            max_steps: 2000,
            seat_rel: 0.02,
            compression_penalty: 1000.0,
            max_iters: 200,
            max_cascade: 500,
            friction_tol: 1e-8,
            eq_tol: 1e-9,
        }
    }
}

impl LoadControl {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidParams(m));
        if !(self.step_rel > 0.0 && self.step_rel < 1.0) {
            return bad(format!("step_rel {} outside (0, 1)", self.step_rel));
        }
        if !(self.seat_rel > 0.0 && self.seat_rel < 0.25) {
            return bad(format!("seat_rel {} outside (0, 0.25)", self.seat_rel));
        }
        if !(self.compression_penalty > 0.0 && self.compression_penalty.is_finite()) {
            return bad("compression_penalty must be positive".into());
        }
        if !(self.friction_tol > 0.0 && self.eq_tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.max_steps == 0 || self.max_iters == 0 {
            return bad("max_steps and max_iters must be at least 1".into());
        }
        Ok(())
    }
}

/// Force-opening curve of a lone bond opened along its normal.
#[derive(Debug, Clone, PartialEq)]
pub struct BondPull {
    pub opening: Vec<f64>,
    pub force: Vec<f64>,
    /// Dissipation the bond reports once broken, N mm.
    pub dissipated: f64,
}

impl BondPull {
    pub fn peak(&self) -> f64 {
        self.force.iter().copied().fold(0.0, f64::max)
    }

    /// Trapezoid area under the curve, N mm.
    pub fn work(&self) -> f64 {
        self.opening
            .windows(2)
            .zip(self.force.windows(2))
            .map(|(o, f)| 0.5 * (f[0] + f[1]) * (o[1] - o[0]))
            .sum()
    }
}

/// Opens a bond of face area `area` monotonically to 1.05 times its mode-I
/// failure opening in `steps` equal increments, updating damage at each.
pub fn pull_bond(area: f64, czm: &CzmParams, steps: usize) -> Result<BondPull, SimError> {
    czm.validate()?;
    let mut bond = Bond::new(0, 1, area, Vec3::zeros(), Vec3::z());
    let failure = 2.0 * czm.g_i_n_per_mm() / czm.sigma_i;
    let (mut opening, mut force) = (vec![0.0], vec![0.0]);
    for k in 1..=steps.max(1) {
        let dn = 1.05 * failure * k as f64 / steps.max(1) as f64;
        let delta = Vec3::new(0.0, 0.0, dn);
        bond.update_damage(&delta, czm);
        opening.push(dn);
        force.push(-bond.force(&delta, czm, czm.k_i).z);
    }
    Ok(BondPull {
        opening,
        force,
        dissipated: bond.dissipated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub gap: f64,
    pub force: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrushRecord {
    pub schema: String,
    pub particle_id: String,
    pub curve: Vec<CurvePoint>,
    pub peak_force: f64,
    pub gap_at_peak: f64,
    pub strength: f64,
    pub valid: bool,
    pub steps_run: usize,
    pub failure: Option<String>,
}

/// `F_c / d^2` in MPa for a valid record.
pub fn strength(record: &CrushRecord) -> Result<f64, SimError> {
    if !record.valid {
        return Err(SimError::InvalidRecord);
    }
    Ok(strength_of(record.peak_force, record.gap_at_peak))
}

pub fn strength_of(peak_force: f64, gap: f64) -> f64 {
    peak_force / (gap * gap)
}

/// True when some sample after the running peak sits at or below 65% of it.
pub fn has_valid_drop(curve: &[CurvePoint]) -> bool {
    let mut peak = 0.0f64;
    for p in curve {
        if p.force > peak {
            peak = p.force;
        } else if peak > 0.0 && p.force <= (1.0 - VALID_DROP) * peak {
            return true;
        }
    }
    false
}

/// CSV of the load curve.
pub fn curve_csv(record: &CrushRecord) -> String {
    let mut out = String::from("step,gap_mm,force_N\n");
    for (k, p) in record.curve.iter().enumerate() {
        out.push_str(&format!("{k},{},{}\n", p.gap, p.force));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Other {
    Cell(usize),
    Upper,
    Lower,
}

/// Compression-only penalty contact with Coulomb friction. `normal` points
/// from cell `a` into the other body; `delta = u_other - u_a`. `anchor` is
/// the committed tangential slip.
#[derive(Debug, Clone)]
struct Contact {
    a: usize,
    other: Other,
    normal: Vec3,
    area: f64,
    anchor: Vec3,
}

impl Contact {
    fn split(&self, delta: &Vec3) -> (f64, Vec3) {
        let dn = self.normal.dot(delta);
        (dn, delta - self.normal * dn)
    }

    fn normal_force(&self, delta: &Vec3, kc: f64) -> f64 {
        (-self.normal.dot(delta)).max(0.0) * kc * self.area
    }

    /// Return mapping against the Coulomb cap: `(closed, f_n, t)` where `t`
    /// is the tangential force the partner exerts on `a`, negated.
    fn trial(&self, delta: &Vec3, czm: &CzmParams, kc: f64) -> (bool, f64, Vec3) {
        let (dn, dt) = self.split(delta);
        if dn >= 0.0 {
            return (false, 0.0, Vec3::zeros());
        }
        let fn_ = -dn * kc * self.area;
        let t = (dt - self.anchor) * (czm.k_ii * self.area);
        let cap = czm.mu * fn_;
        let tn = t.norm();
        if tn <= cap {
            (true, fn_, t)
        } else {
            (true, fn_, t * (cap / tn))
        }
    }

    /// Energy, gradient and Hessian in `delta` with the friction cap frozen
    /// at `cap` (a convex, C1 piecewise-quadratic potential). With `majorise`
    /// the slip branch reports the stick stiffness as its Hessian.
    fn potential(&self, delta: &Vec3, cap: f64, majorise: bool, czm: &CzmParams, kc: f64) -> (f64, Vec3, Mat3) {
        let (dn, dt) = self.split(delta);
        let kn = kc * self.area;
        let kt = czm.k_ii * self.area;
        let nn = self.normal * self.normal.transpose();
        let mut e = 0.0;
        let mut g = Vec3::zeros();
        let mut h = Mat3::zeros();
        if dn < 0.0 {
            e += 0.5 * kn * dn * dn;
            g += self.normal * (kn * dn);
            h += nn * kn;
        }
        let x = dt - self.anchor;
        let xn = x.norm();
        let tangent = Mat3::identity() - nn;
        if kt * xn <= cap {
            e += 0.5 * kt * xn * xn;
            g += x * kt;
            h += tangent * kt;
        } else if majorise {
            e += cap * xn - cap * cap / (2.0 * kt);
            g += x * (cap / xn);
            h += tangent * kt;
        } else {
            let dir = x / xn;
            e += cap * xn - cap * cap / (2.0 * kt);
            g += dir * cap;
            h += (tangent - dir * dir.transpose()) * (cap / xn);
        }
        (e, g, h)
    }
}

/// Energy bookkeeping in N mm. `external` is the trapezoid of platen force
/// over platen travel; `released` collects the energy a damage cascade frees
/// at fixed platen position beyond what the cohesive law dissipates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub external: f64,
    pub stored: f64,
    pub cohesive: f64,
    pub friction: f64,
    pub released: f64,
}

impl EnergyLedger {
    pub fn imbalance(&self) -> f64 {
        self.external - (self.stored + self.cohesive + self.friction + self.released)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub gap: f64,
    /// Platen force before the damage update of this step.
    pub force_frozen: f64,
    /// Platen force after damage settled.
    pub force: f64,
    pub cascades: usize,
    pub any_damage: bool,
}

/// Stepping state of one crushing test.
pub struct CrushSimulation {
    czm: CzmParams,
    pattern: BlockPattern,
    mean_area: f64,
    /// Compressive penalty per unit area, N/mm^3.
    kc: f64,
    control: LoadControl,
    n_cells: usize,
    bonds: Vec<Bond>,
    broken: Vec<Bond>,
    broken_dissipation: f64,
    contacts: Vec<Contact>,
    u: DVector<f64>,
    w: f64,
    dw: f64,
    gap0: f64,
    k_reg: f64,
    force_scale: f64,
    step: usize,
    last_force: f64,
    friction_committed: f64,
    ledger: EnergyLedger,
}

impl CrushSimulation {
    /// Loads the mesh between platens whose normal is `direction`.
    pub fn new(
        mesh: &FragmentMesh,
        direction: &Vec3,
        czm: &CzmParams,
        control: &LoadControl,
    ) -> Result<Self, SimError> {
        czm.validate()?;
        control.validate()?;
        let components = mesh.components();
        if components != 1 {
            return Err(SimError::DisconnectedMesh(components));
        }
        let n = direction.normalize();
        let heights = mesh.particle_poly.vertices().iter().map(|v| n.dot(v));
        let (lo, hi) = heights.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), h| (a.min(h), b.max(h)));
        let seat = control.seat_rel * (hi - lo);
        let upper = Plane::through(n, &(n * (hi - seat)));
        let lower = Plane::through(-n, &(n * (lo + seat)));

        let bonds: Vec<Bond> = mesh
            .adjacency
            .iter()
            .map(|f| {
                Bond::new(
                    f.i,
                    f.j,
                    f.area,
                    crate::geometry::polygon_centroid(&f.polygon),
                    f.normal,
                )
            })
            .collect();
        let mut contacts = Vec::new();
        for (c, cell) in mesh.cells.iter().enumerate() {
            for (plane, other, normal) in [(upper, Other::Upper, n), (lower, Other::Lower, -n)] {
                if let Some(area) = cross_section(cell, &plane) {
                    contacts.push(Contact {
                        a: c,
                        other,
                        normal,
                        area,
                        anchor: Vec3::zeros(),
                    });
                }
            }
        }
        let mean_area = bonds.iter().map(|b| b.area).sum::<f64>() / bonds.len().max(1) as f64;
        let gap0 = (hi - lo) - 2.0 * seat;
        let force_scale = czm.sigma_i * mean_area.max(1e-12);
        Ok(Self {
            czm: *czm,
            pattern: BlockPattern::new(mesh.n_cells(), mesh.adjacency.iter().map(|f| (f.i, f.j))),
            mean_area,
            kc: control.compression_penalty * czm.k_i,
            control: *control,
            n_cells: mesh.n_cells(),
            bonds,
            broken: Vec::new(),
            broken_dissipation: 0.0,
            contacts,
            u: DVector::zeros(3 * mesh.n_cells()),
            w: 0.0,
            dw: control.step_rel * gap0,
            gap0,
            k_reg: 1e-7 * czm.k_i * mean_area.max(1e-12),
            force_scale,
            step: 0,
            last_force: 0.0,
            friction_committed: 0.0,
            ledger: EnergyLedger::default(),
        })
    }

    pub fn gap0(&self) -> f64 {
        self.gap0
    }

    pub fn gap(&self) -> f64 {
        self.gap0 - self.w
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn ledger(&self) -> EnergyLedger {
        self.ledger
    }

    /// Displacement of every cell.
    pub fn displacements(&self) -> Vec<Vec3> {
        (0..self.n_cells).map(|c| self.cell_u(&self.u, c)).collect()
    }

    fn cell_u(&self, u: &DVector<f64>, c: usize) -> Vec3 {
        Vec3::new(u[3 * c], u[3 * c + 1], u[3 * c + 2])
    }

    fn other_u(&self, u: &DVector<f64>, other: Other) -> Vec3 {
        match other {
            Other::Cell(c) => self.cell_u(u, c),
            Other::Upper => self.upper_normal() * -self.w,
            Other::Lower => Vec3::zeros(),
        }
    }

    fn upper_normal(&self) -> Vec3 {
        self.contacts
            .iter()
            .find(|c| c.other == Other::Upper)
            .map(|c| c.normal)
            .unwrap_or_else(Vec3::z)
    }

    fn bond_delta(&self, u: &DVector<f64>, b: &Bond) -> Vec3 {
        self.cell_u(u, b.j) - self.cell_u(u, b.i)
    }

    fn contact_delta(&self, u: &DVector<f64>, c: &Contact) -> Vec3 {
        self.other_u(u, c.other) - self.cell_u(u, c.a)
    }

    /// Reaction on the upper platen, positive in compression.
    pub fn platen_force(&self) -> f64 {
        self.platen_force_at(&self.u)
    }

    fn platen_force_at(&self, u: &DVector<f64>) -> f64 {
        self.contacts
            .iter()
            .filter(|c| c.other == Other::Upper)
            .map(|c| c.normal_force(&self.contact_delta(u, c), self.kc))
            .sum()
    }

    /// Equilibrium at the current platen position with damage frozen.
    /// Friction caps are held fixed while the convex incremental energy is
    /// minimised, then reset to `mu f_n`; repeated until the caps settle.
    /// The cap map can be slow or oscillatory when normal and tangential
    /// forces are strongly coupled, so it is driven by Anderson
    /// mixing, restarted whenever the residual stops improving.
    fn solve(&mut self, anchor_u: &DVector<f64>) -> Result<(), SimError> {
        const DEPTH: usize = 5;
        let mut x = DVector::from_vec(self.caps());
        let mut hist: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();
        let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;
        let (mut best, mut since_best) = (f64::INFINITY, 0);
        for _ in 0..self.control.max_iters {
            self.minimise(anchor_u, x.as_slice())?;
            let f = DVector::from_vec(self.caps()) - &x;
            let r = f.amax();
            let tol = self.control.friction_tol * self.force_scale.max(self.platen_force());
            if r <= tol {
                return Ok(());
            }
            if r < best {
                best = r;
                since_best = 0;
            } else {
                since_best += 1;
            }
            if since_best > 2 * DEPTH {
                hist.clear();
                prev = None;
                since_best = 0;
                best = r;
            }
            if let Some((px, pf)) = prev.take() {
                hist.push((&x - px, &f - pf));
                if hist.len() > DEPTH {
                    hist.remove(0);
                }
            }
            prev = Some((x.clone(), f.clone()));
            x = anderson_step(&x, &f, &hist).map(|v| v.max(0.0));
        }
        Err(SimError::NonConvergence { step: self.step })
    }

    fn caps(&self) -> Vec<f64> {
        self.contacts
            .iter()
            .map(|c| self.czm.mu * c.normal_force(&self.contact_delta(&self.u, c), self.kc))
            .collect()
    }

    /// Total potential and gradient at `u`; adds the (generalised) Hessian
    /// into `hess` when given. `majorise` selects the stick stiffness on
    /// slipping contacts.
    fn assemble(
        &self,
        u: &DVector<f64>,
        anchor_u: &DVector<f64>,
        caps: &[f64],
        mut hess: Option<&mut BlockMatrix<'_>>,
        majorise: bool,
    ) -> (f64, DVector<f64>) {
        let dof = 3 * self.n_cells;
        let mut energy = 0.0;
        let mut grad = DVector::<f64>::zeros(dof);
        for i in 0..dof {
            let d = u[i] - anchor_u[i];
            energy += 0.5 * self.k_reg * d * d;
            grad[i] += self.k_reg * d;
        }
        if let Some(h) = hess.as_deref_mut() {
            h.add_identity(self.k_reg);
        }
        let mut add = |a: usize, other: Other, e: f64, g: Vec3, b: Mat3| {
            energy += e;
            // delta = u_other - u_a, so d/du_a = -g and d/du_other = +g.
            for r in 0..3 {
                grad[3 * a + r] -= g[r];
            }
            if let Other::Cell(o) = other {
                for r in 0..3 {
                    grad[3 * o + r] += g[r];
                }
            }
            if let Some(h) = hess.as_deref_mut() {
                h.add_diag(a, &b);
                if let Other::Cell(o) = other {
                    h.add_diag(o, &b);
                    h.add_pair(a, o, &(-b));
                }
            }
        };
        for b in &self.bonds {
            let delta = self.bond_delta(u, b);
            let (dn, dt) = b.split(&delta);
            let (kn, kt) = b.stiffness(dn > 0.0, &self.czm, self.kc);
            let e = 0.5 * kn * dn * dn + 0.5 * kt * dt.norm_squared();
            let g = b.normal * (kn * dn) + dt * kt;
            add(b.i, Other::Cell(b.j), e, g, block(&b.normal, kn, kt));
        }
        for (c, &cap) in self.contacts.iter().zip(caps) {
            let delta = self.contact_delta(u, c);
            let (e, g, b) = c.potential(&delta, cap, majorise, &self.czm, self.kc);
            add(c.a, c.other, e, g, b);
        }
        (energy, grad)
    }

    /// Newton on the piecewise-quadratic potential with an exact line search.
    /// The slip branch of the friction term has little curvature, so after
    /// a number of slow iterations the Hessian switches to the stick
    /// stiffness, which bounds the curvature from above and converges
    /// monotonically.
    fn minimise(&mut self, anchor_u: &DVector<f64>, caps: &[f64]) -> Result<(), SimError> {
        let mut u = self.u.clone();
        for iter in 0..400 {
            let majorise = iter >= 40;
            let mut h = BlockMatrix::zeros(&self.pattern);
            let (_, g) = self.assemble(&u, anchor_u, caps, Some(&mut h), majorise);
            let gtol = self.control.eq_tol * self.force_scale.max(self.platen_force_at(&u));
            if g.amax() <= gtol {
                self.u = u;
                return Ok(());
            }
            let scale = self.kc * self.mean_area;
            let factor = match h.clone().factor() {
                Some(f) => f,
                None => {
                    // Round-off can leave a singular pivot on a free cell.
                    h.add_identity(1e-10 * scale);
                    h.factor().ok_or(SimError::NonConvergence { step: self.step })?
                }
            };
            let dir = factor.solve(&(-&g));
            let slope = g.dot(&dir);
            if !(slope < 0.0) {
                return Err(SimError::NonConvergence { step: self.step });
            }
            let t = self.line_search(&u, &dir, slope, anchor_u, caps);
            u += &dir * t;
            if (&dir * t).amax() <= 1e-15 * (1.0 + u.amax()) {
                self.u = u;
                return Ok(());
            }
        }
        Err(SimError::NonConvergence { step: self.step })
    }

    /// Minimiser of the convex energy along `dir`, by bracketing the root of
    /// the directional derivative and then regula falsi (Illinois).
    fn line_search(
        &self,
        u: &DVector<f64>,
        dir: &DVector<f64>,
        slope0: f64,
        anchor_u: &DVector<f64>,
        caps: &[f64],
    ) -> f64 {
        let deriv = |t: f64| {
            let (_, g) = self.assemble(&(u + dir * t), anchor_u, caps, None, false);
            g.dot(dir)
        };
        let (mut a, mut fa) = (0.0, slope0);
        let (mut b, mut fb) = (1.0, deriv(1.0));
        let mut grow = 0;
        while fb < 0.0 && grow < 30 {
            a = b;
            fa = fb;
            b *= 2.0;
            fb = deriv(b);
            grow += 1;
        }
        if fb <= 0.0 {
            return b;
        }
        let mut side = 0;
        for _ in 0..60 {
            let t = (a * fb - b * fa) / (fb - fa);
            let ft = deriv(t);
            if ft.abs() <= 1e-12 * slope0.abs() || (b - a) <= 1e-14 * b {
                return t;
            }
            if ft < 0.0 {
                a = t;
                fa = ft;
                if side == -1 {
                    fb *= 0.5;
                }
                side = -1;
            } else {
                b = t;
                fb = ft;
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            }
        }
        0.5 * (a + b)
    }

    /// Stored energy plus all dissipation, with friction slip of the current
    /// solution counted as if committed.
    fn energy_total(&self) -> (f64, f64, f64) {
        let mut stored = 0.0;
        for b in &self.bonds {
            stored += b.energy(&self.bond_delta(&self.u, b), &self.czm, self.kc);
        }
        let mut pending = 0.0;
        for c in &self.contacts {
            let delta = self.contact_delta(&self.u, c);
            let (closed, fn_, t) = c.trial(&delta, &self.czm, self.kc);
            if !closed {
                continue;
            }
            let kn = self.kc * c.area;
            let kt = self.czm.k_ii * c.area;
            stored += 0.5 * fn_ * fn_ / kn + 0.5 * t.norm_squared() / kt;
            let (_, dt) = c.split(&delta);
            let new_anchor = dt - t / kt;
            pending += t.dot(&(new_anchor - c.anchor));
        }
        let cohesive: f64 = self.bonds.iter().map(|b| b.dissipated).sum::<f64>()
            + self.broken_dissipation;
        (stored, cohesive, self.friction_committed + pending)
    }

    fn commit_friction(&mut self) {
        let czm = self.czm;
        for idx in 0..self.contacts.len() {
            let delta = self.contact_delta(&self.u, &self.contacts[idx]);
            let c = &self.contacts[idx];
            let (closed, _, t) = c.trial(&delta, &czm, self.kc);
            let (_, dt) = c.split(&delta);
            let new_anchor = if closed {
                dt - t / (czm.k_ii * c.area)
            } else {
                dt
            };
            if closed {
                self.friction_committed += t.dot(&(new_anchor - c.anchor));
            }
            self.contacts[idx].anchor = new_anchor;
        }
    }

    fn update_damage(&mut self) -> bool {
        let mut changed = false;
        let mut idx = 0;
        while idx < self.bonds.len() {
            let delta = self.bond_delta(&self.u, &self.bonds[idx]);
            let inc = self.bonds[idx].update_damage(&delta, &self.czm);
            if inc > 1e-6 {
                changed = true;
            }
            if self.bonds[idx].broken {
                changed = true;
                let b = self.bonds.remove(idx);
                let (_, dt) = b.split(&delta);
                self.broken_dissipation += b.dissipated;
                self.contacts.push(Contact {
                    a: b.i,
                    other: Other::Cell(b.j),
                    normal: b.normal,
                    area: b.area,
                    anchor: dt,
                });
                self.broken.push(b);
            } else {
                idx += 1;
            }
        }
        changed
    }

    /// Advances the upper platen by one increment.
    pub fn step(&mut self) -> Result<StepReport, SimError> {
        self.step += 1;
        let anchor_u = self.u.clone();
        self.w += self.dw;
        self.solve(&anchor_u)?;
        let force_frozen = self.platen_force();
        self.ledger.external += 0.5 * (self.last_force + force_frozen) * self.dw;
        let (s0, c0, f0) = self.energy_total();

        let mut cascades = 0;
        let mut any_damage = false;
        while cascades < self.control.max_cascade && self.update_damage() {
            any_damage = true;
            cascades += 1;
            self.solve(&anchor_u)?;
        }
        if self.bonds.iter().any(|b| b.damage > 0.0) || !self.broken.is_empty() {
            any_damage = true;
        }
        let (s1, c1, f1) = self.energy_total();
        self.ledger.released += (s0 + c0 + f0) - (s1 + c1 + f1);
        self.commit_friction();
        self.ledger.stored = s1;
        self.ledger.cohesive = c1;
        self.ledger.friction = self.friction_committed;

        let force = self.platen_force();
        self.last_force = force;
        Ok(StepReport {
            step: self.step,
            gap: self.gap(),
            force_frozen,
            force,
            cascades,
            any_damage,
        })
    }

    /// Damage of every shared face in mesh adjacency order is not tracked
    /// once a bond has broken; this returns `(i, j, damage)` for all faces.
    pub fn damage_state(&self) -> Vec<(usize, usize, f64)> {
        let mut out: Vec<(usize, usize, f64)> = self
            .bonds
            .iter()
            .chain(self.broken.iter())
            .map(|b| (b.i, b.j, b.damage))
            .collect();
        out.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        out
    }

    /// Runs to a 35% drop or the step limit.
    pub fn run(mut self, particle_id: &str) -> CrushRecord {
        let mut curve = vec![CurvePoint {
            gap: self.gap0,
            force: 0.0,
        }];
        let (mut peak, mut gap_at_peak) = (0.0f64, self.gap0);
        let mut valid = false;
        let mut failure = None;
        while self.step < self.control.max_steps {
            match self.step() {
                Ok(r) => {
                    curve.push(CurvePoint {
                        gap: r.gap,
                        force: r.force,
                    });
                    if r.force > peak {
                        peak = r.force;
                        gap_at_peak = r.gap;
                    } else if peak > 0.0 && r.force <= (1.0 - VALID_DROP) * peak {
                        valid = true;
                        break;
                    }
                }
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            }
        }
        CrushRecord {
            schema: RECORD_SCHEMA.to_string(),
            particle_id: particle_id.to_string(),
            curve,
            peak_force: peak,
            gap_at_peak,
            strength: strength_of(peak, gap_at_peak),
            valid,
            steps_run: self.step,
            failure,
        }
    }
}

/// Anderson mixing on the fixed point `x = x + f(x)`: `x + f - (dX + dF) gamma`
/// with `gamma` the least-squares fit of `f` by the residual differences.
/// Plain iteration without history.
fn anderson_step(x: &DVector<f64>, f: &DVector<f64>, hist: &[(DVector<f64>, DVector<f64>)]) -> DVector<f64> {
    let plain = x + f;
    if hist.is_empty() {
        return plain;
    }
    let dx = nalgebra::DMatrix::from_columns(&hist.iter().map(|h| h.0.clone()).collect::<Vec<_>>());
    let df = nalgebra::DMatrix::from_columns(&hist.iter().map(|h| h.1.clone()).collect::<Vec<_>>());
    let Ok(gamma) = df.clone().svd(true, true).solve(f, 1e-12 * f.norm().max(1e-300)) else {
        return plain;
    };
    let next = plain - (dx + df) * gamma;
    if next.iter().all(|v| v.is_finite()) {
        next
    } else {
        x + f
    }
}

fn block(n: &Vec3, kn: f64, kt: f64) -> Mat3 {
    let nn = n * n.transpose();
    nn * kn + (Mat3::identity() - nn) * kt
}

/// Area of the section of `cell` by the boundary of `plane`, if it cuts it.
fn cross_section(cell: &crate::geometry::ConvexPolyhedron, plane: &Plane) -> Option<f64> {
    const CAP: usize = usize::MAX;
    match cell.clip_tagged(plane, Some(CAP)) {
        Clipped::Cut(p) => {
            let f = p.face_tags().iter().position(|t| *t == Some(CAP))?;
            let a = polygon_area(&p.face_points(f));
            (a > 0.0).then_some(a)
        }
        _ => None,
    }
}

pub fn simulate_crush(
    mesh: &FragmentMesh,
    axis: Axis,
    czm: &CzmParams,
    control: &LoadControl,
    particle_id: &str,
) -> Result<CrushRecord, SimError> {
    simulate_crush_along(mesh, &axis.unit(), czm, control, particle_id)
}

pub fn simulate_crush_along(
    mesh: &FragmentMesh,
    direction: &Vec3,
    czm: &CzmParams,
    control: &LoadControl,
    particle_id: &str,
) -> Result<CrushRecord, SimError> {
    Ok(CrushSimulation::new(mesh, direction, czm, control)?.run(particle_id))
}
