use std::path::{Path, PathBuf};

use hbargeo::PotentialSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

/// How the potential is given in a config file.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum PotentialSource {
    File(String),
    Inline(PotentialSpec),
    Template(TemplateRef),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateRef {
    pub template: String,
    #[serde(default)]
    pub param: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HbarSection {
    pub grid_n: usize,
    pub tol: f64,
    pub p_max: f64,
    pub p_step: f64,
    pub eps_flat: Option<f64>,
    /// Step cap per cell solve; the solver default when absent.
    pub max_steps: Option<usize>,
}

impl Default for HbarSection {
    fn default() -> Self {
        Self {
            grid_n: 128,
            tol: 1e-3,
            p_max: 2.0,
            p_step: 0.25,
            eps_flat: None,
            max_steps: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct F0Section {
    pub windows: Vec<usize>,
    pub resolutions: Vec<usize>,
    pub eps_edge: f64,
}

impl Default for F0Section {
    fn default() -> Self {
        Self {
            windows: vec![3, 3, 3],
            resolutions: vec![128, 192, 256],
            eps_edge: 1e-2,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomoclinicSection {
    pub classes: Vec<[i64; 2]>,
    pub r0: f64,
    pub dt: f64,
    pub scan: usize,
    /// Metric resolution for the support-value comparison; 0 skips it.
    pub support_resolution: usize,
}

impl Default for HomoclinicSection {
    fn default() -> Self {
        Self {
            classes: vec![[1, 0], [0, 1], [1, 1]],
            r0: 1e-3,
            dt: 1e-3,
            scan: 1440,
            support_resolution: 256,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LpSection {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub theta: f64,
}

impl Default for LpSection {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 2.0,
            alpha: 3.0,
            theta: 0.1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub suite: String,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            suite: "separable-oracle".into(),
        }
    }
}

/// Raw config file contents.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub potential: Option<PotentialSource>,
    pub seed: Option<u64>,
    pub hbar: HbarSection,
    pub f0: F0Section,
    pub homoclinic: HomoclinicSection,
    pub lp: LpSection,
    pub verify: VerifySection,
}

/// Fully resolved configuration; its JSON form is what gets hashed.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub potential: PotentialSpec,
    pub seed: u64,
    pub hbar: HbarSection,
    pub f0: F0Section,
    pub homoclinic: HomoclinicSection,
    pub lp: LpSection,
    pub verify: VerifySection,
    #[serde(skip)]
    pub out: PathBuf,
}

fn read(path: &Path, what: &str) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::input(format!("cannot read {what} {}: {e}", path.display())))
}

fn template(t: &TemplateRef) -> Result<PotentialSpec, Failure> {
    match t.template.as_str() {
        "separable" => Ok(PotentialSpec::separable(1.0, t.param.unwrap_or(1.0))),
        "perturbed-separable" => Ok(PotentialSpec::perturbed_separable(t.param.unwrap_or(0.3))),
        "annulus-barrier" => Ok(PotentialSpec::annulus_barrier(t.param.unwrap_or(1.0))),
        other => Err(Failure::input(format!(
            "unknown potential template {other:?}; available: separable, perturbed-separable, annulus-barrier"
        ))),
    }
}

fn resolve_potential(src: Option<PotentialSource>, base: &Path) -> Result<PotentialSpec, Failure> {
    match src {
        None => Ok(PotentialSpec::separable(1.0, 1.0)),
        Some(PotentialSource::Inline(spec)) => Ok(spec),
        Some(PotentialSource::Template(t)) => template(&t),
        Some(PotentialSource::File(f)) => {
            let path = base.join(&f);
            let text = read(&path, "potential file")?;
            PotentialSpec::from_json(&text)
                .map_err(|e| Failure::input(format!("malformed potential file {}: {e}", path.display())))
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), Failure> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Failure::input(format!("{name} must be a positive number, got {v}")))
    }
}

impl RunConfig {
    pub fn load(command: &str, path: Option<&Path>, out: PathBuf, seed: Option<u64>) -> Result<Self, Failure> {
        let (file, base) = match path {
            Some(p) => {
                let text = read(p, "config file")?;
                let cfg: FileConfig = serde_json::from_str(&text)
                    .map_err(|e| Failure::input(format!("malformed config {}: {e}", p.display())))?;
                (cfg, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        let cfg = RunConfig {
            command: command.to_string(),
            potential: resolve_potential(file.potential, &base)?,
            seed: seed.or(file.seed).unwrap_or(hbargeo::acceptance::DEFAULT_SEED),
            hbar: file.hbar,
            f0: file.f0,
            homoclinic: file.homoclinic,
            lp: file.lp,
            verify: file.verify,
            out,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), Failure> {
        positive("hbar.tol", self.hbar.tol)?;
        if self.hbar.grid_n < 4 {
            return Err(Failure::input("hbar.grid_n must be at least 4"));
        }
        positive("hbar.p_step", self.hbar.p_step)?;
        positive("hbar.p_max", self.hbar.p_max)?;
        if let Some(e) = self.hbar.eps_flat {
            positive("hbar.eps_flat", e)?;
        }
        positive("f0.eps_edge", self.f0.eps_edge)?;
        positive("homoclinic.r0", self.homoclinic.r0)?;
        positive("homoclinic.dt", self.homoclinic.dt)?;
        if self.f0.windows.is_empty() || self.f0.windows.len() != self.f0.resolutions.len() {
            return Err(Failure::input("f0.windows and f0.resolutions must be non-empty and of equal length"));
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
