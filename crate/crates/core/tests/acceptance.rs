//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selector_core::eval::{
    eval_generalization, eval_mixture_baseline, eval_selection, selection_method_name, EvalReport,
    SelectionMode,
};
use selector_core::nn::{frame_count, Model, ModelConfig, SelectorConfig};
use selector_core::pit::{oracle_select, pit_loss};
use selector_core::removal::{remove_indirect, removal_reference};
use selector_core::scene::{
    render_scene, sample_scene_spec, ClassPolicy, CorpusIndex, DatasetConfig, InMemoryScenes, SceneConfig,
    Split,
};
use selector_core::selector::{embed_classes, forward, integrate, FeatureMap};
use selector_core::signal::{
    log_mse_loss, mix_reference, si_sdr, snr_loss, snr_objective_reduced, LOG_EPS, SI_SDR_CAP_DB,
};
use selector_core::train::{
    example_loss, example_loss_and_grad, fit, FitOptions, LossKind, TrainConfig, TrainingExample,
};
use selector_core::{ClassVector, Waveform};

const NUM_CLASSES: usize = 5;
const TOY_LR: f64 = 1e-3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Suite {
    failures: usize,
}

impl Suite {
    fn run(&mut self, name: &str, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !r.pass {
            self.failures += 1;
        }
        println!(
            "{} {name}: {} ({:.1} s)",
            if r.pass { "PASS" } else { "FAIL" },
            r.detail,
            t.elapsed().as_secs_f64()
        );
    }
}

fn noise(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn metric_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut problems = Vec::new();

    // scale invariance
    let mut worst_scale: f64 = 0.0;
    for _ in 0..50 {
        let r = noise(512, &mut rng);
        let e = noise(512, &mut rng);
        let base = si_sdr(&r, &e).unwrap();
        for a in [1e-3, 0.37, 2.0, 55.0, 1e4] {
            let scaled: Vec<f64> = e.iter().map(|v| v * a).collect();
            worst_scale = worst_scale.max((si_sdr(&r, &scaled).unwrap() - base).abs());
        }
    }
    if worst_scale > 1e-9 {
        problems.push(format!("scale invariance off by {worst_scale:e} dB"));
    }

    // orthogonal noise at one tenth of the reference energy gives 10 dB
    let mut worst_orth: f64 = 0.0;
    for _ in 0..20 {
        let s = noise(1000, &mut rng);
        let mut n = noise(1000, &mut rng);
        let proj = dot(&n, &s) / dot(&s, &s);
        n.iter_mut().zip(&s).for_each(|(v, sv)| *v -= proj * sv);
        let g = (dot(&s, &s) / (10.0 * dot(&n, &n))).sqrt();
        let est: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + g * b).collect();
        worst_orth = worst_orth.max((si_sdr(&s, &est).unwrap() - 10.0).abs());
    }
    if worst_orth > 1e-6 {
        problems.push(format!("orthogonal case off by {worst_orth:e} dB"));
    }

    // cap
    let s = noise(300, &mut rng);
    let doubled: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
    let zeros = vec![0.0; 300];
    let cap_ok = si_sdr(&s, &s).unwrap() == SI_SDR_CAP_DB
        && si_sdr(&s, &doubled).unwrap() == SI_SDR_CAP_DB
        && si_sdr(&s, &zeros).unwrap() == -SI_SDR_CAP_DB
        && si_sdr(&zeros, &s).is_err();
    if !cap_ok {
        problems.push("cap behaviour".into());
    }

    // SNR and log-MSE identities
    let mut worst_snr: f64 = 0.0;
    let mut reduced_exact = true;
    let mut logmse_exact = true;
    for _ in 0..50 {
        let x = noise(256, &mut rng);
        let xh = noise(256, &mut rng);
        let err: f64 = x.iter().zip(&xh).map(|(a, b)| (a - b) * (a - b)).sum();
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let direct = 10.0 * (ex / (err + LOG_EPS)).log10();
        worst_snr = worst_snr.max((snr_loss(&x, &xh).unwrap() - direct).abs());
        reduced_exact &= snr_objective_reduced(&x, &xh).unwrap() == -10.0 * (err + LOG_EPS).log10();
        reduced_exact &= snr_loss(&x, &xh).unwrap() == 10.0 * ex.log10() + snr_objective_reduced(&x, &xh).unwrap();
        logmse_exact &= log_mse_loss(&x, &xh).unwrap() == 10.0 * (err / 256.0 + LOG_EPS).log10();
    }
    if worst_snr > 1e-9 {
        problems.push(format!("SNR formula off by {worst_snr:e}"));
    }
    if !reduced_exact {
        problems.push("reduced SNR identity not exact".into());
    }
    if !logmse_exact {
        problems.push("log-MSE identity not exact".into());
    }
    let zero_err = snr_loss(&zeros, &s).is_err();
    if !zero_err {
        problems.push("SNR of zero reference accepted".into());
    }
    if problems.is_empty() {
        outcome(
            true,
            format!("scale drift {worst_scale:.1e} dB, orthogonal error {worst_orth:.1e} dB, identities exact"),
        )
    } else {
        outcome(false, problems.join("; "))
    }
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = Model::new(ModelConfig::Selector(SelectorConfig::miniature(4)), 21).unwrap();
    let ex = TrainingExample {
        id: "grad".into(),
        mixture: noise(200, &mut rng),
        references: vec![noise(200, &mut rng)],
        o: Some(ClassVector::from_indices(4, &[0, 2]).unwrap()),
        loss: LossKind::Snr,
    };
    let (_, analytic) = example_loss_and_grad(&model, &ex).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..model.num_params() {
        let orig = model.params()[i];
        model.params_mut()[i] = orig + h;
        let up = example_loss(&model, &ex).unwrap();
        model.params_mut()[i] = orig - h;
        let down = example_loss(&model, &ex).unwrap();
        model.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs());
        if scale > 1e-7 {
            worst = worst.max((analytic[i] - numeric).abs() / scale);
        }
    }
    let dead: Vec<String> = model
        .param_specs()
        .iter()
        .filter(|s| analytic[s.offset..s.offset + s.len].iter().all(|g| *g == 0.0))
        .map(|s| s.name.clone())
        .collect();
    let groups = model.param_specs().len();
    outcome(
        worst < 1e-3 && dead.is_empty(),
        format!(
            "{} parameters, worst relative error {worst:.2e} (< 1e-3), {}/{groups} groups with nonzero gradient{}",
            model.num_params(),
            groups - dead.len(),
            if dead.is_empty() { String::new() } else { format!(", dead: {dead:?}") }
        ),
    )
}

fn conditioning_semantics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = Model::new(ModelConfig::Selector(SelectorConfig::miniature(6)), 5).unwrap();
    let table = model.embedding_table().unwrap();
    let d = 8;
    let mut ok = true;
    for n in 0..6 {
        ok &= embed_classes(&model, &ClassVector::one_hot(6, n).unwrap()).unwrap() == table[n * d..(n + 1) * d];
    }
    let columns_ok = ok;
    let mut linear = true;
    for _ in 0..50 {
        let mask: Vec<bool> = (0..6).map(|_| rng.random()).collect();
        let a: Vec<usize> = (0..6).filter(|&k| mask[k]).collect();
        let b: Vec<usize> = (0..6).filter(|&k| !mask[k]).collect();
        if a.is_empty() || b.is_empty() {
            continue;
        }
        let oa = ClassVector::from_indices(6, &a).unwrap();
        let ob = ClassVector::from_indices(6, &b).unwrap();
        let ca = embed_classes(&model, &oa).unwrap();
        let cb = embed_classes(&model, &ob).unwrap();
        let cab = embed_classes(&model, &oa.disjoint_union(&ob).unwrap()).unwrap();
        // independent oracle: explicit column sums
        let sum_cols = |idx: &[usize]| -> Vec<f64> {
            (0..d).map(|j| idx.iter().map(|&n| table[n * d + j]).sum()).collect()
        };
        linear &= ca == sum_cols(&a) && cb == sum_cols(&b);
        linear &= ca.iter().zip(&cb).zip(&cab).all(|((x, y), z)| (x + y - z).abs() <= 1e-12);
    }
    let mut integrate_ok = true;
    for _ in 0..20 {
        let frames = rng.random_range(1..50);
        let data = noise(8 * frames, &mut rng);
        let h = FeatureMap::new(8, frames, data).unwrap();
        integrate_ok &= integrate(&h, &[1.0; 8]).unwrap() == h;
        integrate_ok &= integrate(&h, &[0.0; 8]).unwrap().data().iter().all(|v| *v == 0.0);
        let c = noise(8, &mut rng);
        let z = integrate(&h, &c).unwrap();
        for _ in 0..10 {
            let (dd, f) = (rng.random_range(0..8), rng.random_range(0..frames));
            integrate_ok &= z.get(dd, f) == h.get(dd, f) * c[dd];
        }
    }
    let y = Waveform::new(noise(400, &mut rng), 8000).unwrap();
    let outs: Vec<Waveform> = (0..6)
        .map(|k| forward(&model, &y, &ClassVector::one_hot(6, k).unwrap()).unwrap())
        .collect();
    let live = outs.iter().skip(1).any(|o| o.sub(&outs[0]).unwrap().energy() > 0.0);
    let frames_ok = (20..=1020).all(|t| frame_count(t, 20, 10) == (t - 20) / 10 + 1) && frame_count(48_000, 20, 10) == 4799;
    outcome(
        columns_ok && linear && integrate_ok && live && frames_ok,
        format!(
            "one-hot columns {columns_ok}, linearity {linear}, integrate identity/annihilation {integrate_ok}, conditioning live {live}, frame count {frames_ok}"
        ),
    )
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..k {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

fn pit_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    let mut cases = 0;
    for k in 2..=4 {
        let perms = permutations(k);
        for _ in 0..100 {
            let refs: Vec<Vec<f64>> = (0..k).map(|_| noise(80, &mut rng)).collect();
            let ests: Vec<Vec<f64>> = (0..k).map(|_| noise(80, &mut rng)).collect();
            let brute = perms
                .iter()
                .map(|p| {
                    let total: f64 = p.iter().enumerate().map(|(r, &e)| log_mse_loss(&refs[r], &ests[e]).unwrap()).sum();
                    total / k as f64
                })
                .fold(f64::INFINITY, f64::min);
            cases += 1;
            if pit_loss(&refs, &ests).unwrap() != brute {
                mismatches += 1;
            }
        }
    }
    let mut select_mismatch = 0;
    for _ in 0..100 {
        let outs: Vec<Vec<f64>> = (0..5).map(|_| noise(80, &mut rng)).collect();
        let reference = noise(80, &mut rng);
        let scores: Vec<f64> = outs.iter().map(|o| si_sdr(&reference, o).unwrap()).collect();
        let best = (0..5).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
        if oracle_select(&outs, &reference).unwrap() != best {
            select_mismatch += 1;
        }
    }
    outcome(
        mismatches == 0 && select_mismatch == 0,
        format!("{cases} PIT instances (K = 2, 3, 4), {mismatches} mismatches; oracle selection {select_mismatch}/100 mismatches"),
    )
}

fn scene_calibration() -> Outcome {
    let corpus = CorpusIndex::synthetic(NUM_CLASSES, 8000).unwrap();
    let config = SceneConfig {
        class_policy: ClassPolicy::mix3_5(),
        ..SceneConfig::default()
    };
    let mut worst_snr: f64 = 0.0;
    let mut worst_add: f64 = 0.0;
    let mut events = 0;
    let mut identical = true;
    for i in 0..100u64 {
        let spec = sample_scene_spec(&corpus, &config, 1000 + i).unwrap();
        let scene = render_scene(&spec, &corpus).unwrap();
        for (ev, spec_ev) in scene.events.iter().zip(&spec.events) {
            let len = ev.signal.len();
            let bg = &scene.background[ev.onset..ev.onset + len];
            let snr = 10.0 * (ev.signal.energy() / bg.iter().map(|v| v * v).sum::<f64>()).log10();
            worst_snr = worst_snr.max((snr - spec_ev.snr_db).abs());
            events += 1;
        }
        for t in 0..scene.mixture.len() {
            let sum: f64 = scene.background[t] + scene.stems.stems().iter().map(|s| s[t]).sum::<f64>();
            worst_add = worst_add.max((sum - scene.mixture[t]).abs());
        }
        if i < 10 {
            let again = render_scene(&spec, &corpus).unwrap();
            let bits = |w: &Waveform| w.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            identical &= bits(&again.mixture) == bits(&scene.mixture)
                && again.stems.stems().iter().zip(scene.stems.stems()).all(|(a, b)| bits(a) == bits(b));
        }
    }
    outcome(
        worst_snr <= 0.1 && worst_add < 1e-6 && identical,
        format!("{events} events, worst SNR error {worst_snr:.2e} dB (<= 0.1), additivity residual {worst_add:.1e} (< 1e-6), re-render bit-identical {identical}"),
    )
}

fn removal_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = Model::new(ModelConfig::Selector(SelectorConfig::miniature(4)), 9).unwrap();
    let mut exact = 0;
    for i in 0..50 {
        let len = rng.random_range(20..2000);
        // WAV-representable samples
        let y: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0f32..1.0) as f64).collect();
        let y = Waveform::new(y, 8000).unwrap();
        let o = ClassVector::one_hot(4, i % 4).unwrap();
        let sel = forward(&model, &y, &o).unwrap();
        let rem = remove_indirect(&model, &y, &o).unwrap();
        if sel.iter().zip(rem.iter()).zip(y.iter()).all(|((a, b), c)| (a + b).to_bits() == c.to_bits()) {
            exact += 1;
        }
    }
    let corpus = CorpusIndex::synthetic(4, 8000).unwrap();
    let scenes = InMemoryScenes::generate(
        &corpus,
        &DatasetConfig {
            count: 10,
            seed: 8,
            ..Default::default()
        },
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for item in &scenes.items {
        for k in &item.active_classes {
            let o = ClassVector::one_hot(4, *k).unwrap();
            let x = mix_reference(&item.stems, &o).unwrap();
            let r = removal_reference(&item.mixture, &item.stems, &o).unwrap();
            for ((a, b), y) in x.iter().zip(r.iter()).zip(item.mixture.iter()) {
                worst = worst.max((a + b - y).abs());
            }
        }
    }
    outcome(
        exact == 50 && worst <= 1e-12,
        format!("{exact}/50 inputs reconstructed bitwise; complementarity residual {worst:.1e}"),
    )
}

fn dataset(split: Split, count: usize, seed: u64, scene: SceneConfig) -> InMemoryScenes {
    let corpus = CorpusIndex::synthetic(NUM_CLASSES, 8000).unwrap();
    InMemoryScenes::generate(
        &corpus,
        &DatasetConfig {
            scene: SceneConfig { split, ..scene },
            count,
            seed,
            num_targets: 3,
        },
    )
    .unwrap()
}

fn toy_train_config(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: TOY_LR,
        max_epochs: 1,
        steps_per_epoch: Some(steps),
        crop_s: Some(1.0),
        seed,
        ..TrainConfig::default()
    }
}

fn mean_sdri(report: &EvalReport, method: &str, selected: usize) -> f64 {
    report
        .overall(method, selected)
        .and_then(|r| r.mean_sdri_db)
        .unwrap_or(f64::NEG_INFINITY)
}

fn first_last_losses(metrics: &Path) -> (f64, f64) {
    let text = std::fs::read_to_string(metrics).unwrap();
    let losses: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    let window = 50.min(losses.len());
    let head = losses[..window].iter().sum::<f64>() / window as f64;
    let tail = losses[losses.len() - window..].iter().sum::<f64>() / window as f64;
    (head, tail)
}

fn toy_learning(workdir: &Path, model_out: &mut Option<Model>) -> Outcome {
    let train = dataset(Split::Train, 240, 11, SceneConfig::default());
    let test = dataset(Split::Test, 60, 13, SceneConfig::default());
    let cfg_model = ModelConfig::Selector(SelectorConfig::toy(NUM_CLASSES));

    // (a) overfit on 10 fixed items
    let fixed = InMemoryScenes {
        items: train.items[..10].to_vec(),
        num_classes: NUM_CLASSES,
        name: "overfit-10".into(),
    };
    let overfit_dir = workdir.join("overfit");
    let s = fit(&fixed, None, cfg_model.clone(), &toy_train_config(1000, 5), &overfit_dir, &FitOptions::default()).unwrap();
    let overfit = eval_selection(&fixed, &s.model, 1, SelectionMode::Simultaneous).unwrap();
    let a = mean_sdri(&overfit, &selection_method_name(SelectionMode::Simultaneous), 1);
    let (head, tail) = first_last_losses(&overfit_dir.join("metrics.csv"));

    // (b), (c) on held-out scenes
    let main_dir = workdir.join("selector");
    let s = fit(&train, None, cfg_model, &toy_train_config(800, 7), &main_dir, &FitOptions::default()).unwrap();
    let model = s.model;
    let b_report = eval_selection(&test, &model, 1, SelectionMode::Simultaneous).unwrap();
    let b = mean_sdri(&b_report, "selector-simultaneous", 1);
    let sim = eval_selection(&test, &model, 2, SelectionMode::Simultaneous).unwrap();
    let it = eval_selection(&test, &model, 2, SelectionMode::Iterative).unwrap();
    let c_sim = mean_sdri(&sim, "selector-simultaneous", 2);
    let c_it = mean_sdri(&it, "selector-iterative", 2);
    *model_out = Some(model);
    let pass = a >= 10.0 && b >= 5.0 && c_sim >= c_it - 1.5;
    outcome(
        pass,
        format!(
            "(a) overfit 10 items SDRi {a:.2} dB (>= 10; training loss {head:.2} -> {tail:.2} dB), \
             (b) held-out I=1 SDRi {b:.2} dB (>= 5), (c) I=2 simultaneous {c_sim:.2} dB vs iterative {c_it:.2} dB (>= iterative - 1.5)"
        ),
    )
}

fn generalization(workdir: &Path, model: Option<&Model>) -> Outcome {
    let Some(model) = model else {
        return outcome(false, "no trained toy model (toy-scale learning failed to run)");
    };
    let scene = SceneConfig {
        duration_s: 10.0,
        events_per_scene: 8,
        class_policy: ClassPolicy::Fixed(5),
        ..SceneConfig::default()
    };
    let long = dataset(Split::Test, 40, 17, scene);
    let dump = workdir.join("generalization");
    let report = eval_generalization(&long, model, 2, Some(&dump)).unwrap();
    let sdri = mean_sdri(&report, "generalization", 2);
    let files = std::fs::read_dir(&dump).unwrap().count();
    let lengths_ok = long.items.iter().all(|i| i.mixture.len() == 80_000);
    outcome(
        sdri >= 2.0 && files == 3 * long.items.len() && lengths_ok,
        format!(
            "{} scenes of 10 s with 5 classes, I=2 mean SDRi {sdri:.2} dB (>= 2), {files} waveform dumps",
            long.items.len()
        ),
    )
}

fn baseline_structure() -> Outcome {
    let scene = SceneConfig {
        class_policy: ClassPolicy::mix3_5(),
        ..SceneConfig::default()
    };
    let data = dataset(Split::Test, 300, 19, scene);
    let reports: Vec<EvalReport> = (1..=3).map(|i| eval_mixture_baseline(&data, i).unwrap()).collect();
    let base = |i: usize, c: usize| {
        reports[i - 1]
            .cell("mixture", i, c)
            .and_then(|r| r.mean_mixture_si_sdr_db)
            .unwrap_or(f64::NAN)
    };
    let mut ok = true;
    let mut table = Vec::new();
    for c in 3..=5 {
        ok &= base(1, c) < base(2, c) && base(2, c) < base(3, c);
        table.push(format!(
            "{c} in mix: {:.1}/{:.1}/{:.1}",
            base(1, c),
            base(2, c),
            base(3, c)
        ));
    }
    for i in 1..=3 {
        ok &= base(i, 3) > base(i, 4) && base(i, 4) > base(i, 5);
    }
    let counts: usize = reports[0].rows.iter().filter(|r| r.classes_in_mixture.is_some()).map(|r| r.count).sum();
    ok &= counts == 300;
    outcome(
        ok,
        format!("baseline SI-SDR dB for I=1/2/3 -> {}; rises with I, falls with classes in mixture", table.join(", ")),
    )
}

fn main() -> ExitCode {
    let workdir = tempfile::tempdir().expect("temp dir");
    let mut suite = Suite { failures: 0 };
    let started = Instant::now();
    suite.run("metric correctness", metric_correctness);
    suite.run("gradient checks", gradient_checks);
    suite.run("conditioning semantics", conditioning_semantics);
    suite.run("PIT correctness", pit_correctness);
    suite.run("scene-synth calibration", scene_calibration);
    suite.run("removal identity", removal_identity);
    let mut model = None;
    suite.run("toy-scale learning", || toy_learning(workdir.path(), &mut model));
    suite.run("generalization smoke", || generalization(workdir.path(), model.as_ref()));
    suite.run("baseline-table structure", baseline_structure);
    println!(
        "acceptance: {} of 9 criteria passed in {:.0} s",
        9 - suite.failures,
        started.elapsed().as_secs_f64()
    );
    if suite.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
