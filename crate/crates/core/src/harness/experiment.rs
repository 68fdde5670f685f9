//! Assembles a model, optional defenses and one attack from a config, runs
//! them, and collects metrics.

use std::fmt::Write as _;
use std::net::TcpListener;
use std::path::Path;

use rand::seq::SliceRandom;

use super::config::{Arch, AttackSpec, DataSource, ExperimentConfig};
use super::data::{load_csv, synthesize_dataset, train_test_split};
use super::metrics::{write_metrics, MetricsRecord};
use super::HarnessError;
use crate::attacks::{
    biggio_evasion, fgsm, label_flip, membership_attack, mi_face, svm_poison_point, AttackLog,
    EvasionConfig, InversionConfig, InversionServerHook, MembershipConfig, MpafHook, PoisonConfig,
};
use crate::dp::{dpsgd_train, get_epsilon};
use crate::fed::{
    accept_clients, run_client, run_federation, run_server, shard_dataset, FedClient, FedConfig,
    HookSet, PaillierClientHook, ServerOutcome, SparseTopK, TcpChannel, Transport,
};
use crate::model::{
    norm2, train_sgd, train_svm, Dataset, Loss, Model, SvmModel, SvmParams, Tensor,
};
use crate::paillier::{keygen, FixedPointCodec};
use crate::rng::SeedTree;

/// A named text file produced by a run (CSV traces, reconstructions).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub artifacts: Vec<Artifact>,
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    seeds: SeedTree,
    run_id: String,
    records: Vec<MetricsRecord>,
    artifacts: Vec<Artifact>,
}

impl Run<'_> {
    fn record(&self, stage: &str, step: u64) -> MetricsRecord {
        MetricsRecord::new(&self.run_id, self.cfg.seed, stage, step)
    }

    fn push(&mut self, r: MetricsRecord) {
        self.records.push(r);
    }

    fn artifact(&mut self, name: String, contents: String) {
        self.artifacts.push(Artifact { name, contents });
    }
}

fn uses_signed_labels(cfg: &ExperimentConfig) -> bool {
    matches!(cfg.model.arch, Arch::Svm { .. }) || cfg.model.loss == Loss::Hinge
}

/// Loads or synthesizes the dataset with the labels the model expects.
pub fn load_dataset(cfg: &ExperimentConfig, seeds: &SeedTree) -> Result<Dataset, HarnessError> {
    let data = match &cfg.dataset.source {
        DataSource::Synthetic { kind, n, noise } => {
            synthesize_dataset(*kind, *n, *noise, &mut seeds.stream("data"))?
        }
        DataSource::Csv { path, label_column } => load_csv(path, label_column)?.0,
    };
    let binary = data.n_classes() <= 2;
    if (uses_signed_labels(cfg) || cfg.model.loss == Loss::Logistic)
        && !binary {
            return Err(HarnessError::Config(
                "this model needs a binary dataset".into(),
            ));
        }
    if uses_signed_labels(cfg) {
        return Ok(data.to_signed_labels()?);
    }
    Ok(data)
}

/// The network described by `[model]` for the given data shape.
pub fn build_model(
    cfg: &ExperimentConfig,
    dim: usize,
    classes: usize,
    seeds: &SeedTree,
) -> Result<Model, HarnessError> {
    let Arch::Mlp { hidden, activation } = &cfg.model.arch else {
        return Err(HarnessError::Config("not a network architecture".into()));
    };
    let out = match cfg.model.loss {
        Loss::CrossEntropy => classes.max(2),
        _ => 1,
    };
    let mut sizes = vec![dim];
    sizes.extend(hidden);
    sizes.push(out);
    Ok(Model::mlp(
        &sizes,
        *activation,
        cfg.model.loss,
        &mut seeds.stream("model"),
    )?)
}

fn accuracy(model: &Model, data: &Dataset) -> Result<f64, HarnessError> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    Ok(model.accuracy(&data.x, &data.y)?)
}

fn column_bounds(data: &Dataset) -> Vec<(f64, f64)> {
    (0..data.dim())
        .map(|j| {
            (0..data.len()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
                let v = data.row(i)[j];
                (lo.min(v), hi.max(v))
            })
        })
        .collect()
}

fn csv_row(values: &[f64]) -> String {
    let cells: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    cells.join(",")
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Runs one experiment. Identical configs produce identical output.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    cfg.check_combination()?;
    let seeds = SeedTree::new(cfg.seed);
    let mut run = Run {
        cfg,
        seeds,
        run_id: cfg.run_id(),
        records: Vec::new(),
        artifacts: Vec::new(),
    };
    let data = load_dataset(cfg, &seeds)?;
    if let AttackSpec::Membership { .. } = cfg.attack {
        membership(&mut run, &data)?;
    } else {
        let (train, test) =
            train_test_split(&data, cfg.dataset.test_fraction, &mut seeds.stream("split"));
        if train.is_empty() {
            return Err(HarnessError::Config(
                "no training rows after the split".into(),
            ));
        }
        match (&cfg.model.arch, &cfg.fed) {
            (Arch::Svm { kernel, c }, _) => {
                let params = SvmParams {
                    seed: cfg.seed,
                    ..SvmParams::new(*kernel, *c)
                };
                svm_run(&mut run, &train, &test, &params)?;
            }
            (_, Some(_)) => federated(&mut run, &train, &test, data.n_classes())?,
            (_, None) => centralized(&mut run, &train, &test, data.n_classes())?,
        }
    }
    Ok(RunOutput {
        records: run.records,
        artifacts: run.artifacts,
    })
}

fn centralized(
    run: &mut Run,
    train: &Dataset,
    test: &Dataset,
    classes: usize,
) -> Result<(), HarnessError> {
    let cfg = run.cfg;
    let mut model = build_model(cfg, train.dim(), classes, &run.seeds)?;
    let mut train = train.clone();
    if let AttackSpec::LabelFlip { rate, .. } = cfg.attack {
        let (flipped, idx) = label_flip(&train, rate, &mut run.seeds.stream("attack"));
        let r = run.record("attack", 0).with("flipped", idx.len() as f64);
        run.push(r);
        train = flipped;
    }
    let mut train_rng = run.seeds.stream("train");
    let mut fin = run.record("final", 0);
    if let Some(dp) = &cfg.dp {
        let out = dpsgd_train(
            &model,
            &train,
            &dp.config,
            dp.epochs,
            cfg.model.train.lr,
            &mut train_rng,
        )?;
        for (i, l) in out.lot_losses.iter().enumerate() {
            let r = run.record("lot", i as u64).with("loss", *l);
            run.push(r);
        }
        let eps = get_epsilon(&out.ledger, dp.config.delta)?;
        fin.set("epsilon", eps.epsilon);
        fin.set("delta", eps.delta);
        fin.set("order", eps.order as f64);
        fin.set("max_clipped_norm", out.max_clipped_norm);
        model = out.model;
    } else {
        let losses = train_sgd(&mut model, &train, &cfg.model.train, &mut train_rng)?;
        for (i, l) in losses.iter().enumerate() {
            let r = run.record("epoch", i as u64).with("loss", *l);
            run.push(r);
        }
    }
    fin.set("train_accuracy", accuracy(&model, &train)?);
    fin.set("test_accuracy", accuracy(&model, test)?);
    run.push(fin);

    match &cfg.attack {
        AttackSpec::Fgsm { eps } => {
            let mut hits = 0usize;
            let mut csv = String::from("index,label,clean,adversarial\n");
            let eval = if test.is_empty() { &train } else { test };
            for i in 0..eval.len() {
                let adv = fgsm(&model, eval.row(i), eval.y[i], *eps, eval.bounds.as_deref())?;
                let clean = model.predict(&Tensor::row_vector(eval.row(i)))?[0];
                let pred = model.predict(&Tensor::row_vector(&adv))?[0];
                hits += usize::from(pred == eval.y[i]);
                writeln!(csv, "{i},{},{clean},{pred}", eval.y[i]).expect("string write");
            }
            let clean = accuracy(&model, eval)?;
            let r = run
                .record("attack", 0)
                .with("eps", *eps)
                .with("clean_accuracy", clean)
                .with("adversarial_accuracy", hits as f64 / eval.len() as f64);
            run.push(r);
            run.artifact("fgsm_predictions.csv".into(), csv);
        }
        AttackSpec::MiFace {
            target_class,
            gamma,
            max_iters,
            lr,
        } => {
            let n_cls = match model.loss_kind() {
                Loss::CrossEntropy => model.output_dim(),
                _ => 2,
            };
            let classes: Vec<i64> = match target_class {
                Some(c) => vec![*c],
                None => (0..n_cls as i64).collect(),
            };
            for c in classes {
                let res = mi_face(&model, c, *gamma, *max_iters, *lr)?;
                let rows: Vec<usize> = (0..train.len()).filter(|&i| train.y[i] == c).collect();
                let mut r = run
                    .record("attack", c as u64)
                    .with("class", c as f64)
                    .with("confidence", res.confidence)
                    .with("objective", *res.trace.last().expect("trace has the start"));
                if rows.is_empty() {
                    r.set_null("cosine_to_centered_mean");
                } else {
                    // class mean minus overall mean: the part of a class a
                    // discriminative model can actually encode
                    let mut mean = vec![0.0; train.dim()];
                    for &i in &rows {
                        for (m, v) in mean.iter_mut().zip(train.row(i)) {
                            *m += v / rows.len() as f64;
                        }
                    }
                    for i in 0..train.len() {
                        for (m, v) in mean.iter_mut().zip(train.row(i)) {
                            *m -= v / train.len() as f64;
                        }
                    }
                    let x = res.x.data();
                    let cos = x.iter().zip(&mean).map(|(a, b)| a * b).sum::<f64>()
                        / (norm2(x) * norm2(&mean));
                    r.set("cosine_to_centered_mean", cos);
                }
                run.push(r);
                run.artifact(
                    format!("mi_face_class{c}.csv"),
                    csv_row(res.x.data()) + "\n",
                );
            }
        }
        _ => {}
    }
    Ok(())
}

fn svm_run(
    run: &mut Run,
    train: &Dataset,
    test: &Dataset,
    params: &SvmParams,
) -> Result<(), HarnessError> {
    let cfg = run.cfg;
    let eval = if test.is_empty() { train } else { test };
    match &cfg.attack {
        AttackSpec::Poison {
            step,
            max_iter,
            target_label,
            valid_fraction,
        } => {
            let (fit, valid) = train_test_split(
                train,
                *valid_fraction,
                &mut run.seeds.stream("poison_split"),
            );
            let clean = train_svm(&fit, params)?;
            let mut rng = run.seeds.stream("attack");
            let pool: Vec<usize> = (0..fit.len())
                .filter(|&i| fit.y[i] == -target_label)
                .collect();
            let start = *pool
                .choose(&mut rng)
                .ok_or_else(|| HarnessError::Data("no row to relabel".into()))?;
            let pcfg = PoisonConfig {
                step: *step,
                max_iter: *max_iter,
                bounds: Some(column_bounds(train)),
                ..PoisonConfig::default()
            };
            let res = svm_poison_point(&fit, &valid, params, fit.row(start), *target_label, &pcfg)?;
            for (i, l) in res.trace.iter().enumerate() {
                let r = run.record("attack", i as u64).with("valid_hinge", *l);
                run.push(r);
            }
            let poisoned = train_svm(&fit.push(&res.x_poison, *target_label)?, params)?;
            let r = run
                .record("final", 0)
                .with("clean_valid_error", 1.0 - clean.accuracy(&valid))
                .with("poisoned_valid_error", 1.0 - poisoned.accuracy(&valid))
                .with("improved", f64::from(u8::from(res.improved)));
            run.push(r);
            run.artifact("poison_point.csv".into(), csv_row(&res.x_poison) + "\n");
        }
        AttackSpec::Evasion {
            lambda,
            d_max,
            step,
            max_iter,
            samples,
        } => {
            let svm = train_svm(train, params)?;
            let r = run
                .record("final", 0)
                .with("train_accuracy", svm.accuracy(train))
                .with("test_accuracy", svm.accuracy(eval));
            run.push(r);
            evasion(
                run, &svm, train, eval, *lambda, *d_max, *step, *max_iter, *samples,
            )?;
        }
        _ => {
            let svm = train_svm(train, params)?;
            let r = run
                .record("final", 0)
                .with("train_accuracy", svm.accuracy(train))
                .with("test_accuracy", svm.accuracy(eval));
            run.push(r);
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evasion(
    run: &mut Run,
    svm: &SvmModel,
    train: &Dataset,
    eval: &Dataset,
    lambda: f64,
    d_max: f64,
    step: f64,
    max_iter: usize,
    samples: usize,
) -> Result<(), HarnessError> {
    let benign: Vec<Vec<f64>> = (0..train.len())
        .filter(|&i| train.y[i] == -1)
        .map(|i| train.row(i).to_vec())
        .collect();
    let mut bounds = column_bounds(train);
    for i in 0..eval.len() {
        for (b, v) in bounds.iter_mut().zip(eval.row(i)) {
            *b = (b.0.min(*v), b.1.max(*v));
        }
    }
    let ecfg = EvasionConfig {
        lambda_mimicry: lambda,
        d_max,
        step,
        max_iter,
        bounds: Some(bounds),
        mimicry_gamma: None,
    };
    let targets: Vec<usize> = (0..eval.len())
        .filter(|&i| svm.decision(eval.row(i)) > 0.0)
        .take(samples)
        .collect();
    let mut trace = String::from("sample,iter,objective\n");
    let mut evaded = 0usize;
    for (k, &i) in targets.iter().enumerate() {
        let x0 = eval.row(i);
        let res = biggio_evasion(svm, x0, &benign, &ecfg)?;
        for (t, f) in res.trace.iter().enumerate() {
            writeln!(trace, "{k},{t},{f:?}").expect("string write");
        }
        evaded += usize::from(res.evaded);
        let moved: Vec<f64> = res.x_adv.iter().zip(x0).map(|(a, b)| a - b).collect();
        let r = run
            .record("attack", k as u64)
            .with("decision_before", svm.decision(x0))
            .with("decision_after", res.decision)
            .with("distance", norm2(&moved));
        run.push(r);
    }
    let rate = if targets.is_empty() {
        f64::NAN
    } else {
        evaded as f64 / targets.len() as f64
    };
    let r = run
        .record("attack_summary", 0)
        .with("evasion_rate", rate)
        .with("samples", targets.len() as f64);
    run.push(r);
    run.artifact("evasion_trace.csv".into(), trace);
    Ok(())
}

fn membership(run: &mut Run, data: &Dataset) -> Result<(), HarnessError> {
    let cfg = run.cfg;
    let AttackSpec::Membership {
        n_shadows,
        shadow_split,
        victim_train,
    } = cfg.attack
    else {
        unreachable!("called for membership only");
    };
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut run.seeds.stream("split"));
    if data.len() < 2 * victim_train {
        return Err(HarnessError::Config(
            "dataset is smaller than two victim splits".into(),
        ));
    }
    let members = data.subset(&idx[..victim_train]);
    let non_members = data.subset(&idx[victim_train..2 * victim_train]);
    let population = data.subset(&idx[2 * victim_train..]);
    let mut victim = build_model(cfg, data.dim(), data.n_classes(), &run.seeds)?;
    train_sgd(
        &mut victim,
        &members,
        &cfg.model.train,
        &mut run.seeds.stream("train"),
    )?;
    let mcfg = MembershipConfig {
        n_shadows,
        shadow_split,
        shadow_train: cfg.model.train,
        ..MembershipConfig::default()
    };
    let out = membership_attack(
        &victim,
        &population,
        &members,
        &non_members,
        &mcfg,
        &mut run.seeds.stream("attack"),
    )?;
    let r = run
        .record("attack", 0)
        .with("victim_train_accuracy", accuracy(&victim, &members)?)
        .with("victim_holdout_accuracy", accuracy(&victim, &non_members)?)
        .with("auc", out.auc)
        .with("pooled_auc", out.pooled_auc);
    run.push(r);
    Ok(())
}

struct FedSetup {
    model: Model,
    shards: Vec<Dataset>,
    fcfg: FedConfig,
    transport: Transport,
    hooks: HookSet,
    inversion_log: Option<AttackLog>,
}

fn fed_setup(run: &Run, train: &Dataset, classes: usize) -> Result<FedSetup, HarnessError> {
    let cfg = run.cfg;
    let (fcfg, transport) = cfg
        .fed
        .clone()
        .ok_or_else(|| HarnessError::Config("no [fed] section".into()))?;
    let model = build_model(cfg, train.dim(), classes, &run.seeds)?;
    let k = fcfg.clients;
    if train.len() < k as usize {
        return Err(HarnessError::Config(format!(
            "{} training rows for {k} clients",
            train.len()
        )));
    }
    let mut shards = shard_dataset(train, k as usize);
    let mut hooks = HookSet::new();
    if let Some(f) = cfg.defense.sparse_topk {
        let hook = SparseTopK::new(f)?;
        hooks = hooks.attach_all_clients(k, |_| hook);
    }
    match &cfg.attack {
        AttackSpec::LabelFlip { rate, malicious } => {
            let mut rng = run.seeds.stream("attack");
            for shard in shards.iter_mut().take(*malicious as usize) {
                *shard = label_flip(shard, *rate, &mut rng).0;
            }
        }
        AttackSpec::Mpaf {
            scale,
            history,
            malicious,
        } => {
            let target = model
                .reinitialized(&mut run.seeds.stream("mpaf_target"))?
                .params();
            for rank in 1..=*malicious {
                let hook = if *history {
                    MpafHook::history()
                } else {
                    MpafHook::target(target.clone(), *scale)
                };
                hooks = hooks.attach_client(rank, hook);
            }
        }
        _ => {}
    }
    let mut inversion_log = None;
    if let AttackSpec::Inversion {
        variant,
        max_iters,
        lr,
        tv_weight,
        restarts,
    } = &cfg.attack
    {
        let side = (train.dim() as f64).sqrt() as usize;
        let icfg = InversionConfig {
            max_iters: *max_iters,
            lr: *lr,
            tv_weight: *tv_weight,
            seeds: (0..*restarts).collect(),
            input_shape: (side * side == train.dim()).then_some((side, side)),
            ..InversionConfig::new(*variant)
        };
        let hook = InversionServerHook::new(model.clone(), icfg);
        inversion_log = Some(hook.log());
        hooks = hooks.attach_server(hook);
    }
    if let Some(p) = &cfg.paillier {
        let (pk, sk) = keygen(p.key_bits, &mut run.seeds.stream("paillier"))?;
        let codec = FixedPointCodec::new(&pk.n, p.scale_bits);
        hooks = hooks.attach_paillier(PaillierClientHook::new(pk, sk, codec)?);
    }
    Ok(FedSetup {
        model,
        shards,
        fcfg,
        transport,
        hooks,
        inversion_log,
    })
}

fn fed_records(
    run: &mut Run,
    setup_shards: &[Dataset],
    server: &ServerOutcome,
    final_model: Option<&Model>,
    log: Option<&AttackLog>,
    train: &Dataset,
    test: &Dataset,
) -> Result<(), HarnessError> {
    for m in &server.rounds {
        let r = run
            .record("round", m.round as u64)
            .with("global_loss", m.global_loss);
        run.push(r);
    }
    let mut fin = run.record("final", 0).with("final_loss", server.final_loss);
    match final_model {
        Some(model) => {
            fin.set("train_accuracy", accuracy(model, train)?);
            fin.set("test_accuracy", accuracy(model, test)?);
        }
        None => {
            fin.set_null("train_accuracy");
            fin.set_null("test_accuracy");
        }
    }
    run.push(fin);

    let Some(log) = log else { return Ok(()) };
    let log = log.lock().expect("attack log poisoned").clone();
    let mut index = Vec::new();
    for (i, rec) in log.iter().enumerate() {
        let mut r = run
            .record("inversion", i as u64)
            .with("round", rec.round as f64)
            .with("rank", rec.rank as f64)
            .with("multi_step", f64::from(u8::from(rec.multi_step)));
        let truth = setup_shards
            .get(rec.rank as usize - 1)
            .filter(|s| s.len() == 1)
            .map(|s| s.row(0));
        match &rec.result {
            Some(res) => {
                r.set("match_loss", res.final_match_loss);
                r.set("seed", res.seed as f64);
                match truth {
                    Some(t) => r.set("mse_vs_truth", mse(res.x_hat.data(), t)),
                    None => r.set_null("mse_vs_truth"),
                }
                run.artifact(
                    format!("reconstruction_r{}_c{}.csv", rec.round, rec.rank),
                    csv_row(res.x_hat.data()) + "\n",
                );
            }
            None => {
                r.set_null("match_loss");
                r.set_null("seed");
                r.set_null("mse_vs_truth");
            }
        }
        let v = &r.values;
        index.push(serde_json::json!({
            "round": rec.round,
            "rank": rec.rank,
            "seed": v["seed"],
            "match_loss": v["match_loss"],
            "mse_vs_truth": v["mse_vs_truth"],
        }));
        run.push(r);
    }
    let text =
        serde_json::to_string_pretty(&index).map_err(|e| HarnessError::Io(e.to_string()))? + "\n";
    run.artifact("inversion_index.json".into(), text);
    Ok(())
}

fn federated(
    run: &mut Run,
    train: &Dataset,
    test: &Dataset,
    classes: usize,
) -> Result<(), HarnessError> {
    let s = fed_setup(run, train, classes)?;
    let out = run_federation(
        &s.model,
        &s.shards,
        &s.fcfg,
        s.hooks,
        s.transport,
        &run.seeds,
    )?;
    fed_records(
        run,
        &s.shards,
        &out.server,
        Some(&out.model),
        s.inversion_log.as_ref(),
        train,
        test,
    )
}

/// Shared view of the split for one federated process.
fn fed_prepare(cfg: &ExperimentConfig) -> Result<(Run<'_>, Dataset, Dataset, usize), HarnessError> {
    cfg.check_combination()?;
    if cfg.fed.is_none() || matches!(cfg.model.arch, Arch::Svm { .. }) {
        return Err(HarnessError::Config(
            "a federated run needs [fed] and a network model".into(),
        ));
    }
    let seeds = SeedTree::new(cfg.seed);
    let run = Run {
        cfg,
        seeds,
        run_id: cfg.run_id(),
        records: Vec::new(),
        artifacts: Vec::new(),
    };
    let data = load_dataset(cfg, &seeds)?;
    let (train, test) =
        train_test_split(&data, cfg.dataset.test_fraction, &mut seeds.stream("split"));
    Ok((run, train, test, data.n_classes()))
}

/// Runs the server (rank 0) of a multi-process federation, accepting
/// `clients` TCP connections on `addr`. Every process must load the same
/// config; data and keys are derived from its seed.
pub fn serve_federation(cfg: &ExperimentConfig, addr: &str) -> Result<RunOutput, HarnessError> {
    let (mut run, train, test, classes) = fed_prepare(cfg)?;
    let mut s = fed_setup(&run, &train, classes)?;
    let listener =
        TcpListener::bind(addr).map_err(|e| HarnessError::Io(format!("bind {addr}: {e}")))?;
    let channels = accept_clients(&listener, s.fcfg.clients as usize)?;
    let pk = s.hooks.paillier.as_ref().map(|p| p.public_key().clone());
    let server = run_server(
        &s.model,
        &s.fcfg,
        &mut s.hooks.server,
        pk.as_ref(),
        channels,
    )?;
    let final_model = server
        .global
        .as_ref()
        .map(|g| s.model.with_params(g))
        .transpose()?;
    fed_records(
        &mut run,
        &s.shards,
        &server,
        final_model.as_ref(),
        s.inversion_log.as_ref(),
        &train,
        &test,
    )?;
    Ok(RunOutput {
        records: run.records,
        artifacts: run.artifacts,
    })
}

/// Runs client `rank` of a multi-process federation against the server at
/// `addr`, returning its final local loss.
pub fn join_federation(cfg: &ExperimentConfig, rank: u32, addr: &str) -> Result<f64, HarnessError> {
    let (run, train, _, classes) = fed_prepare(cfg)?;
    let mut s = fed_setup(&run, &train, classes)?;
    if rank == 0 || rank > s.fcfg.clients {
        return Err(HarnessError::Config(format!(
            "rank {rank} outside 1..={}",
            s.fcfg.clients
        )));
    }
    let mut client = FedClient::new(
        rank,
        s.model.clone(),
        &s.shards[rank as usize - 1],
        s.fcfg.clone(),
        &run.seeds,
    );
    client.hooks = s.hooks.take_client_hooks(rank);
    client.paillier = s.hooks.paillier.clone();
    let mut ch = TcpChannel::connect(addr, 50)?;
    Ok(run_client(client, &mut ch)?.final_loss)
}

/// Writes metrics and artifacts to the paths named in `[output]`, or to
/// the given overrides.
pub fn write_outputs(
    cfg: &ExperimentConfig,
    out: &RunOutput,
    metrics: Option<&Path>,
    artifacts: Option<&Path>,
) -> Result<(), HarnessError> {
    if let Some(p) = metrics.or(cfg.output.metrics.as_deref()) {
        write_metrics(&out.records, p)?;
    }
    if let Some(dir) = artifacts.or(cfg.output.artifacts.as_deref()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(e.to_string()))?;
        for a in &out.artifacts {
            std::fs::write(dir.join(&a.name), &a.contents)
                .map_err(|e| HarnessError::Io(e.to_string()))?;
        }
    }
    Ok(())
}

/// Centralized training only, for the `train` subcommand.
pub fn train_only(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let mut plain = cfg.clone();
    plain.attack = AttackSpec::None;
    plain.fed = None;
    plain.paillier = None;
    plain.defense = Default::default();
    run_experiment(&plain)
}
