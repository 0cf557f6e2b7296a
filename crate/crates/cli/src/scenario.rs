//! Turns flat `key = value` configuration into simulation and fit specs.
//!
//! Recognised sections: `simulate.*`, `segments.*`, `spatial.*`, `model.*`,
//! `prior.*`, `mcmc.*` and `negbinmix.*`.

use mam_core::io::KvConfig;
use mam_core::{
    positions_for_seed, run_car_mam, run_mam, run_negbinmix, simulate_car_mam, simulate_mam, simulate_segments,
    ChainOutput, Dataset, Error, FieldKind, GammaKind, GenerativeParams, Hyperparameters, ModelConfig, ModelKind,
    Result, SamplerSettings, Scheme, SegmentDesign, SpatialConfig,
};
use nalgebra::DMatrix;

/// How memberships are generated.
#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    /// Independent memberships with global activation probabilities.
    Mam { activation: Vec<f64> },
    /// Memberships driven by a latent field over uniform positions.
    Car { field: FieldKind, eta: f64 },
    /// Binned track with background, signal and empty segments.
    Segments(SegmentDesign),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub p: usize,
    pub params: GenerativeParams,
    pub design: Design,
    pub spatial: SpatialConfig,
    pub seed: u64,
}

fn matrix(cfg: &KvConfig, key: &str) -> Result<DMatrix<f64>> {
    let rows = cfg.get_matrix(key)?.ok_or_else(|| Error::Config(format!("missing required key '{key}'")))?;
    Ok(DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]))
}

fn vec_or(cfg: &KvConfig, key: &str, default: Vec<f64>) -> Result<Vec<f64>> {
    Ok(cfg.get_vec(key)?.unwrap_or(default))
}

pub fn spatial_config(cfg: &KvConfig) -> Result<SpatialConfig> {
    let d = SpatialConfig::default();
    let spatial = SpatialConfig {
        gamma_kind: cfg.get_or::<GammaKind>("spatial.gamma", d.gamma_kind)?,
        radius: cfg.get_or("spatial.radius", d.radius)?,
        scale: cfg.get_or("spatial.scale", d.scale)?,
        eta_init: cfg.get_or("spatial.eta_init", d.eta_init)?,
    };
    spatial.validate()?;
    Ok(spatial)
}

impl SimulationSpec {
    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let mu = matrix(cfg, "simulate.mu")?;
        let scheme: Scheme = cfg.get_or("simulate.scheme", Scheme::Additive)?;
        let phi: f64 = cfg.require("simulate.phi")?;
        let theta_b: f64 = cfg.get_or("simulate.theta_b", 0.01)?;
        let params = GenerativeParams::new(scheme, mu, phi, theta_b)?;
        let k = params.k;
        let design = match cfg.require_str("simulate.design")? {
            "mam" => Design::Mam { activation: vec_or(cfg, "simulate.activation", vec![0.5; k])? },
            "car" => Design::Car { field: cfg.require("simulate.field")?, eta: cfg.require("simulate.eta")? },
            "segments" => {
                let d = SegmentDesign::default();
                Design::Segments(SegmentDesign {
                    bin_width: cfg.get_or("segments.bin_width", d.bin_width)?,
                    signal_fraction: cfg.get_or("segments.signal_fraction", d.signal_fraction)?,
                    mean_signal_len: cfg.get_or("segments.mean_signal_len", d.mean_signal_len)?,
                    empty_fraction: cfg.get_or("segments.empty_fraction", d.empty_fraction)?,
                    mean_empty_len: cfg.get_or("segments.mean_empty_len", d.mean_empty_len)?,
                    pi_background: vec_or(cfg, "segments.pi_background", d.pi_background)?,
                    pi_signal: vec_or(cfg, "segments.pi_signal", d.pi_signal)?,
                    pi_empty: vec_or(cfg, "segments.pi_empty", d.pi_empty)?,
                })
            }
            other => {
                return Err(Error::Config(format!(
                    "key 'simulate.design': unknown design '{other}' (expected mam, car or segments)"
                )))
            }
        };
        Ok(Self {
            p: cfg.require("simulate.p")?,
            params,
            design,
            spatial: spatial_config(cfg)?,
            seed: cfg.get_or("simulate.seed", 1)?,
        })
    }

    pub fn run(&self) -> Result<Dataset> {
        if self.p == 0 {
            return Err(Error::Config("key 'simulate.p': need at least one unit".into()));
        }
        match &self.design {
            Design::Mam { activation } => simulate_mam(self.p, &self.params, activation, self.seed),
            Design::Car { field, eta } => {
                let pos = positions_for_seed(self.p, self.seed);
                Ok(simulate_car_mam(&self.params, pos, *field, *eta, &self.spatial, self.seed)?.0)
            }
            Design::Segments(d) => Ok(simulate_segments(self.p, &self.params, d, self.seed)?.0),
        }
    }
}

/// Everything needed to run one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSpec {
    pub kind: ModelKind,
    pub model: ModelConfig,
    pub settings: SamplerSettings,
    /// Baseline mixture size.
    pub n_components: usize,
    /// Baseline mean pinned in component 0.
    pub fix_first_mean: Option<f64>,
}

fn hyperparameters(cfg: &KvConfig) -> Result<Hyperparameters> {
    let d = Hyperparameters::default();
    Ok(Hyperparameters {
        a_mu: cfg.get_or("prior.a_mu", d.a_mu)?,
        b_mu: cfg.get_or("prior.b_mu", d.b_mu)?,
        a_phi: cfg.get_or("prior.a_phi", d.a_phi)?,
        b_phi: cfg.get_or("prior.b_phi", d.b_phi)?,
        eta_lo: cfg.get_or("prior.eta_lo", d.eta_lo)?,
        eta_hi: cfg.get_or("prior.eta_hi", d.eta_hi)?,
    })
}

pub fn sampler_settings(cfg: &KvConfig) -> Result<SamplerSettings> {
    let d = SamplerSettings::default();
    let s = SamplerSettings {
        n_iter: cfg.get_or("mcmc.iters", d.n_iter)?,
        n_burnin: cfg.get_or("mcmc.burnin", d.n_burnin)?,
        thin: cfg.get_or("mcmc.thin", d.thin)?,
        seed: cfg.get_or("mcmc.seed", d.seed)?,
        proposal_sd_mu: cfg.get_or("mcmc.sd_mu", d.proposal_sd_mu)?,
        proposal_sd_phi: cfg.get_or("mcmc.sd_phi", d.proposal_sd_phi)?,
        proposal_sd_x: cfg.get_or("mcmc.sd_x", d.proposal_sd_x)?,
        proposal_sd_eta: cfg.get_or("mcmc.sd_eta", d.proposal_sd_eta)?,
        adapt: cfg.get_or("mcmc.adapt", d.adapt)?,
        n_starts: cfg.get_or("mcmc.starts", d.n_starts)?,
        pilot_iters: cfg.get_or("mcmc.pilot_iters", d.pilot_iters)?,
    };
    s.validate()?;
    Ok(s)
}

impl FitSpec {
    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let kind: ModelKind = cfg.get_or("model.kind", ModelKind::Mam)?;
        let k: usize = cfg.require("model.k")?;
        let mut model = ModelConfig::new(k, cfg.get_or("model.scheme", Scheme::Additive)?)?;
        if let Some(v) = cfg.get_vec("model.outward_mean")? {
            model.outward_mean = v;
        }
        model.hyper = hyperparameters(cfg)?;
        if kind == ModelKind::CarMam || cfg.keys().any(|key| key.starts_with("spatial.")) {
            model.spatial = Some(spatial_config(cfg)?);
        }
        model.validate()?;
        let fix_first_mean = cfg.get::<f64>("negbinmix.fix_first_mean")?;
        Ok(Self {
            kind,
            model,
            settings: sampler_settings(cfg)?,
            n_components: cfg.get_or("negbinmix.components", 1usize << k)?,
            fix_first_mean,
        })
    }

    pub fn run(&self, data: &Dataset) -> Result<ChainOutput> {
        self.model.check_conditions(data.n_conditions())?;
        match self.kind {
            ModelKind::Mam => run_mam(data, &self.model, &self.settings),
            ModelKind::CarMam => run_car_mam(data, &self.model, &self.settings),
            ModelKind::NegBinMix => {
                run_negbinmix(data, self.n_components, &self.model.hyper, &self.settings, self.fix_first_mean)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIM: &str = "simulate.design = mam\nsimulate.p = 50\nsimulate.mu = 12, 3; 3, 12\nsimulate.phi = 300\n";

    #[test]
    fn simulation_defaults() {
        let spec = SimulationSpec::from_config(&KvConfig::parse(SIM).unwrap()).unwrap();
        assert_eq!(spec.params.k, 2);
        assert_eq!(spec.design, Design::Mam { activation: vec![0.5, 0.5] });
        let ds = spec.run().unwrap();
        assert_eq!((ds.n_units(), ds.n_conditions()), (50, 2));
        assert!(ds.truth().is_some());
    }

    #[test]
    fn missing_key_is_named() {
        let cfg = KvConfig::parse("simulate.design = mam\nsimulate.p = 5\nsimulate.phi = 3\n").unwrap();
        let err = SimulationSpec::from_config(&cfg).unwrap_err().to_string();
        assert!(err.contains("simulate.mu"), "{err}");
    }

    #[test]
    fn unknown_design_is_rejected() {
        let cfg = KvConfig::parse(&SIM.replace("= mam", "= grid")).unwrap();
        assert!(SimulationSpec::from_config(&cfg).unwrap_err().to_string().contains("grid"));
    }

    #[test]
    fn car_design_gets_positions() {
        let text = SIM.replace("= mam", "= car") + "simulate.field = sine\nsimulate.eta = 0.3\n";
        let ds = SimulationSpec::from_config(&KvConfig::parse(&text).unwrap()).unwrap().run().unwrap();
        let pos = ds.positions().unwrap();
        assert!(pos.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn fit_spec_reads_sections() {
        let text = "model.kind = car-mam\nmodel.k = 2\nmodel.scheme = codominance0\nprior.eta_hi = 5\n\
                    mcmc.iters = 30\nmcmc.burnin = 10\nspatial.radius = 3000\nnegbinmix.fix_first_mean = 0.01\n";
        let spec = FitSpec::from_config(&KvConfig::parse(text).unwrap()).unwrap();
        assert_eq!(spec.kind, ModelKind::CarMam);
        assert_eq!(spec.model.scheme, Scheme::Codominance0);
        assert_eq!(spec.model.hyper.eta_hi, 5.0);
        assert_eq!(spec.model.spatial.as_ref().unwrap().radius, 3000.0);
        assert_eq!((spec.settings.n_iter, spec.settings.n_burnin), (30, 10));
        assert_eq!(spec.n_components, 4);
        assert_eq!(spec.fix_first_mean, Some(0.01));
    }

    #[test]
    fn bad_value_names_key() {
        let cfg = KvConfig::parse("model.k = two\n").unwrap();
        assert!(FitSpec::from_config(&cfg).unwrap_err().to_string().contains("model.k"));
    }
}
