//! Strict INI-style experiment configuration.
//!
//! Keys before the first `[section]` header are run-level (`name`, `seed`).
//! `[fed]`, `[dp]` and `[paillier]` are enabled by being present. Unknown
//! sections or keys and ill-typed values are rejected before any work
//! starts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::data::DatasetKind;
use super::HarnessError;
use crate::attacks::Variant;
use crate::dp::DpConfig;
use crate::fed::{Aggregation, FedConfig, Transport};
use crate::model::{Activation, Kernel, Loss, SgdConfig};

pub const SEED_ENV: &str = "PRIVSEC_SEED";

/// Parsed but untyped INI: section → key → (value, line number).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ini {
    pub sections: BTreeMap<String, BTreeMap<String, (String, usize)>>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut ini = Ini::default();
        let mut current = String::new();
        ini.sections.insert(current.clone(), BTreeMap::new());
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| {
                        HarnessError::Config(format!("line {line_no}: unterminated section header"))
                    })?
                    .trim();
                if name.is_empty() || ini.sections.contains_key(name) {
                    return Err(HarnessError::Config(format!(
                        "line {line_no}: empty or repeated section [{name}]"
                    )));
                }
                current = name.to_string();
                ini.sections.insert(current.clone(), BTreeMap::new());
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {line_no}: expected key = value"))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(HarnessError::Config(format!("line {line_no}: empty key")));
            }
            let sec = ini
                .sections
                .get_mut(&current)
                .expect("current section exists");
            if sec
                .insert(k.to_string(), (v.to_string(), line_no))
                .is_some()
            {
                return Err(HarnessError::Config(format!(
                    "line {line_no}: duplicate key {k:?}"
                )));
            }
        }
        Ok(ini)
    }
}

/// Consumes keys from one section; leftovers are an error.
struct Section {
    name: String,
    keys: BTreeMap<String, (String, usize)>,
}

impl Section {
    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, HarnessError> {
        match self.keys.remove(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|_| {
                HarnessError::Config(format!(
                    "line {line}: [{}] {key} = {v:?} has the wrong type",
                    self.name
                ))
            }),
        }
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, HarnessError> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    fn need<T: FromStr>(&mut self, key: &str) -> Result<T, HarnessError> {
        self.take(key)?.ok_or_else(|| {
            HarnessError::Config(format!("[{}] is missing required key {key:?}", self.name))
        })
    }

    fn finish(self) -> Result<(), HarnessError> {
        match self.keys.iter().next() {
            None => Ok(()),
            Some((k, (_, line))) => {
                let sec = if self.name.is_empty() {
                    "top level".to_string()
                } else {
                    format!("[{}]", self.name)
                };
                Err(HarnessError::Config(format!(
                    "line {line}: unknown key {k:?} in {sec}"
                )))
            }
        }
    }
}

/// Wraps an enum-like string so `Section::take` can parse it.
macro_rules! keyword_enum {
    ($name:ident { $($text:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $name {
            type Err = ();
            fn from_str(s: &str) -> Result<Self, ()> {
                match s {
                    $($text => Ok($variant),)+
                    _ => Err(()),
                }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossName(pub Loss);
keyword_enum!(LossName {
    "cross_entropy" => LossName(Loss::CrossEntropy),
    "logistic" => LossName(Loss::Logistic),
    "mse" => LossName(Loss::Mse),
    "hinge" => LossName(Loss::Hinge),
});

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ActName(Activation);
keyword_enum!(ActName {
    "relu" => ActName(Activation::Relu),
    "sigmoid" => ActName(Activation::Sigmoid),
    "tanh" => ActName(Activation::Tanh),
});

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct AggName(Aggregation);
keyword_enum!(AggName {
    "delta" => AggName(Aggregation::WeightedDelta),
    "params" => AggName(Aggregation::WeightedParams),
});

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct TransportName(Transport);
keyword_enum!(TransportName {
    "inprocess" => TransportName(Transport::InProcess),
    "tcp" => TransportName(Transport::Tcp),
});

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct VariantName(Variant);
keyword_enum!(VariantName {
    "dlg" => VariantName(Variant::Dlg),
    "idlg" => VariantName(Variant::Idlg),
    "cosine_gs" => VariantName(Variant::CosineGs),
});

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct KernelName(bool);
keyword_enum!(KernelName {
    "linear" => KernelName(false),
    "rbf" => KernelName(true),
});

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct MpafModeName(bool);
keyword_enum!(MpafModeName {
    "target" => MpafModeName(false),
    "history" => MpafModeName(true),
});

/// Comma-separated list of layer widths; empty means none.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Widths(Vec<usize>);

impl FromStr for Widths {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        if s.trim().is_empty() {
            return Ok(Widths(Vec::new()));
        }
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| ()))
            .collect::<Result<_, _>>()
            .map(Widths)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        kind: DatasetKind,
        n: usize,
        noise: f64,
    },
    Csv {
        path: PathBuf,
        label_column: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub source: DataSource,
    pub test_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Arch {
    /// Hidden widths; an empty list gives a linear model.
    Mlp {
        hidden: Vec<usize>,
        activation: Activation,
    },
    Svm {
        kernel: Kernel,
        c: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub arch: Arch,
    pub loss: Loss,
    pub train: SgdConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpSpec {
    pub config: DpConfig,
    pub epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaillierSpec {
    pub key_bits: u64,
    pub scale_bits: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttackSpec {
    None,
    Fgsm {
        eps: f64,
    },
    Evasion {
        lambda: f64,
        d_max: f64,
        step: f64,
        max_iter: usize,
        samples: usize,
    },
    Poison {
        step: f64,
        max_iter: usize,
        target_label: i64,
        valid_fraction: f64,
    },
    LabelFlip {
        rate: f64,
        malicious: u32,
    },
    Mpaf {
        scale: f64,
        history: bool,
        malicious: u32,
    },
    Membership {
        n_shadows: usize,
        shadow_split: usize,
        victim_train: usize,
    },
    Inversion {
        variant: Variant,
        max_iters: usize,
        lr: f64,
        tv_weight: f64,
        restarts: u64,
    },
    MiFace {
        target_class: Option<i64>,
        gamma: f64,
        max_iters: usize,
        lr: f64,
    },
}

impl AttackSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::None => "none",
            AttackSpec::Fgsm { .. } => "fgsm",
            AttackSpec::Evasion { .. } => "evasion",
            AttackSpec::Poison { .. } => "poison",
            AttackSpec::LabelFlip { .. } => "labelflip",
            AttackSpec::Mpaf { .. } => "mpaf",
            AttackSpec::Membership { .. } => "membership",
            AttackSpec::Inversion { .. } => "inversion",
            AttackSpec::MiFace { .. } => "mi_face",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DefenseSpec {
    pub sparse_topk: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputSpec {
    pub metrics: Option<PathBuf>,
    pub artifacts: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub fed: Option<(FedConfig, Transport)>,
    pub dp: Option<DpSpec>,
    pub paillier: Option<PaillierSpec>,
    pub attack: AttackSpec,
    pub defense: DefenseSpec,
    pub output: OutputSpec,
}

const SECTIONS: [&str; 9] = [
    "", "dataset", "model", "fed", "dp", "paillier", "attack", "defense", "output",
];

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        Self::from_ini(Ini::parse(text)?)
    }

    /// Reads a file, resolving relative paths against its directory and
    /// applying the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DataSource::Csv { path: p, .. } = &mut cfg.dataset.source {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
        Ok(cfg)
    }

    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<(), HarnessError> {
        if let Some(v) = value {
            self.seed = v.trim().parse().map_err(|_| {
                HarnessError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
            })?;
        }
        Ok(())
    }

    pub fn run_id(&self) -> String {
        format!("{}-{}", self.name, self.seed)
    }

    fn from_ini(ini: Ini) -> Result<Self, HarnessError> {
        let mut secs: BTreeMap<String, Section> = BTreeMap::new();
        for (name, keys) in ini.sections {
            if !SECTIONS.contains(&name.as_str()) {
                return Err(HarnessError::Config(format!("unknown section [{name}]")));
            }
            secs.insert(name.clone(), Section { name, keys });
        }
        let mut section = |name: &str| -> Option<Section> { secs.remove(name) };
        let empty = |name: &str| Section {
            name: name.to_string(),
            keys: BTreeMap::new(),
        };

        let mut top = section("").unwrap_or_else(|| empty(""));
        let name: String = top.get("name", "experiment".to_string())?;
        let seed: u64 = top.need("seed")?;
        top.finish()?;

        let mut s = section("dataset")
            .ok_or_else(|| HarnessError::Config("missing [dataset] section".into()))?;
        let source = match s.take::<String>("path")? {
            Some(path) => DataSource::Csv {
                path: PathBuf::from(path),
                label_column: s.get("label_column", "label".to_string())?,
            },
            None => DataSource::Synthetic {
                kind: s.need::<String>("kind")?.parse()?,
                n: s.get("n", 200)?,
                noise: s.get("noise", 0.5)?,
            },
        };
        let dataset = DatasetSpec {
            source,
            test_fraction: s.get("test_fraction", 0.25)?,
        };
        s.finish()?;
        if !(0.0..1.0).contains(&dataset.test_fraction) {
            return Err(HarnessError::Config(
                "test_fraction must be in [0, 1)".into(),
            ));
        }

        let mut s = section("model").unwrap_or_else(|| empty("model"));
        let arch: String = s.get("arch", "mlp".to_string())?;
        let arch = match arch.as_str() {
            "mlp" => Arch::Mlp {
                hidden: s.get("hidden", Widths(vec![16]))?.0,
                activation: s.get("activation", ActName(Activation::Relu))?.0,
            },
            "linear" => Arch::Mlp {
                hidden: Vec::new(),
                activation: Activation::Relu,
            },
            "svm" => {
                let rbf = s.get("kernel", KernelName(true))?.0;
                let kernel = if rbf {
                    Kernel::Rbf {
                        gamma: s.get("gamma", 1.0)?,
                    }
                } else {
                    Kernel::Linear
                };
                Arch::Svm {
                    kernel,
                    c: s.get("c", 1.0)?,
                }
            }
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown model arch {other:?}"
                )))
            }
        };
        let default_loss = if matches!(arch, Arch::Svm { .. }) {
            Loss::Hinge
        } else {
            Loss::CrossEntropy
        };
        let model = ModelSpec {
            loss: s.get("loss", LossName(default_loss))?.0,
            train: SgdConfig {
                epochs: s.get("epochs", 50)?,
                lr: s.get("lr", 0.1)?,
                batch: s.take("batch")?,
            },
            arch,
        };
        s.finish()?;

        let fed = match section("fed") {
            None => None,
            Some(mut s) => {
                let d = FedConfig::default();
                let cfg = FedConfig {
                    rounds: s.get("rounds", d.rounds)?,
                    clients: s.get("clients", d.clients)?,
                    local_epochs: s.get("local_epochs", d.local_epochs)?,
                    local_batch: s.take("local_batch")?,
                    lr: s.get("lr", d.lr)?,
                    aggregation: s.get("aggregation", AggName(d.aggregation))?.0,
                    fedprox_mu: s.get("fedprox_mu", d.fedprox_mu)?,
                };
                let transport = s.get("transport", TransportName(Transport::InProcess))?.0;
                s.finish()?;
                cfg.validate()
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
                Some((cfg, transport))
            }
        };

        let dp = match section("dp") {
            None => None,
            Some(mut s) => {
                let lot_size = s.need("lot_size")?;
                let config = DpConfig {
                    clip_norm: s.need("clip_norm")?,
                    noise_multiplier: s.need("noise_multiplier")?,
                    lot_size,
                    batch_size: s.get("batch_size", lot_size)?,
                    delta: s.get("delta", 1e-5)?,
                };
                let epochs = s.get("epochs", 1)?;
                s.finish()?;
                config
                    .validate()
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
                Some(DpSpec { config, epochs })
            }
        };

        let paillier = match section("paillier") {
            None => None,
            Some(mut s) => {
                let p = PaillierSpec {
                    key_bits: s.get("key_bits", 512)?,
                    scale_bits: s.get("scale_bits", 32)?,
                };
                s.finish()?;
                Some(p)
            }
        };

        let attack = match section("attack") {
            None => AttackSpec::None,
            Some(mut s) => {
                let name: String = s.need("name")?;
                let spec = match name.as_str() {
                    "none" => AttackSpec::None,
                    "fgsm" => AttackSpec::Fgsm {
                        eps: s.get("eps", 0.1)?,
                    },
                    "evasion" => AttackSpec::Evasion {
                        lambda: s.get("lambda", 0.0)?,
                        d_max: s.get("d_max", 1.0)?,
                        step: s.get("step", 0.05)?,
                        max_iter: s.get("max_iter", 100)?,
                        samples: s.get("samples", 10)?,
                    },
                    "poison" => AttackSpec::Poison {
                        step: s.get("step", 0.5)?,
                        max_iter: s.get("max_iter", 20)?,
                        target_label: s.get("target_label", 1)?,
                        valid_fraction: s.get("valid_fraction", 0.5)?,
                    },
                    "labelflip" => AttackSpec::LabelFlip {
                        rate: s.get("rate", 0.5)?,
                        malicious: s.get("malicious", 1)?,
                    },
                    "mpaf" => AttackSpec::Mpaf {
                        scale: s.get("scale", 1.0)?,
                        history: s.get("mode", MpafModeName(false))?.0,
                        malicious: s.get("malicious", 1)?,
                    },
                    "membership" => AttackSpec::Membership {
                        n_shadows: s.get("n_shadows", 4)?,
                        shadow_split: s.get("shadow_split", 50)?,
                        victim_train: s.get("victim_train", 50)?,
                    },
                    "inversion" => AttackSpec::Inversion {
                        variant: s.get("variant", VariantName(Variant::Idlg))?.0,
                        max_iters: s.get("max_iters", 2000)?,
                        lr: s.get("lr", 0.1)?,
                        tv_weight: s.get("tv_weight", 0.0)?,
                        restarts: s.get("restarts", 10)?,
                    },
                    "mi_face" => AttackSpec::MiFace {
                        target_class: s.take("target_class")?,
                        gamma: s.get("gamma", 0.01)?,
                        max_iters: s.get("max_iters", 200)?,
                        lr: s.get("lr", 1.0)?,
                    },
                    other => return Err(HarnessError::Config(format!("unknown attack {other:?}"))),
                };
                s.finish()?;
                spec
            }
        };

        let mut s = section("defense").unwrap_or_else(|| empty("defense"));
        let defense = DefenseSpec {
            sparse_topk: s.take("sparse_topk")?,
        };
        s.finish()?;

        let mut s = section("output").unwrap_or_else(|| empty("output"));
        let output = OutputSpec {
            metrics: s.take::<String>("metrics")?.map(PathBuf::from),
            artifacts: s.take::<String>("artifacts")?.map(PathBuf::from),
        };
        s.finish()?;

        let cfg = ExperimentConfig {
            name,
            seed,
            dataset,
            model,
            fed,
            dp,
            paillier,
            attack,
            defense,
            output,
        };
        cfg.check_combination()?;
        Ok(cfg)
    }

    /// Rejects attack and defense combinations the runner cannot execute.
    pub fn check_combination(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        let svm = matches!(self.model.arch, Arch::Svm { .. });
        if svm && (self.fed.is_some() || self.dp.is_some()) {
            return bad("SVM models train centrally without DP");
        }
        if self.fed.is_some() && self.dp.is_some() {
            return bad("DPSGD runs centrally; remove [dp] or [fed]");
        }
        if self.fed.is_none() && (self.paillier.is_some() || self.defense.sparse_topk.is_some()) {
            return bad("[paillier] and sparse_topk need [fed]");
        }
        if let Some(f) = self.defense.sparse_topk {
            if !(f > 0.0 && f <= 1.0) {
                return bad("sparse_topk must be in (0, 1]");
            }
        }
        match &self.attack {
            AttackSpec::Evasion { .. } | AttackSpec::Poison { .. } if !svm => {
                bad("evasion and poison attack an SVM")
            }
            AttackSpec::Fgsm { .. } | AttackSpec::Membership { .. } | AttackSpec::MiFace { .. }
                if svm =>
            {
                bad("this attack needs a differentiable network")
            }
            AttackSpec::Inversion { .. } | AttackSpec::Mpaf { .. } if self.fed.is_none() => {
                bad("this attack runs inside a federation")
            }
            AttackSpec::Inversion { .. } if self.model.loss != Loss::CrossEntropy => {
                bad("inversion needs cross_entropy")
            }
            AttackSpec::LabelFlip { malicious, .. } | AttackSpec::Mpaf { malicious, .. }
                if self
                    .fed
                    .as_ref()
                    .is_some_and(|(f, _)| *malicious > f.clients) =>
            {
                bad("more malicious clients than clients")
            }
            AttackSpec::Fgsm { eps } if !(*eps >= 0.0) => bad("eps must be >= 0"),
            AttackSpec::LabelFlip { rate, .. } if !(0.0..=1.0).contains(rate) => {
                bad("rate must be in [0, 1]")
            }
            _ => Ok(()),
        }
    }
}
