//! Trains a top-k and a fully-soft model side by side and prints the mean
//! off-diagonal Grassmann distance and Jacobian similarity at checkpoints
//! along the way.
//!
//! cargo run --release -p moegeom-model --example routing_trajectory -- data/corpus.txt 0 800

use moegeom_core::pipeline::{analyze_layer, AnalysisOptions, Provenance};
use moegeom_core::PcaMode;
use moegeom_model::train::{sample_batch, Adam};
use moegeom_model::{capture_corpus, CaptureOptions, ModelConfig, MoeTransformer, RouterKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn report(model: &MoeTransformer<f32>, corpus: &[u8]) -> String {
    let captures = capture_corpus(model, corpus, CaptureOptions::default())
        .and_then(|b| b.to_layer_captures(model))
        .expect("capture");
    let opts = AnalysisOptions {
        n_components: 5,
        mode: PcaMode::SampleWeighted,
    };
    let mut line = String::new();
    for c in &captures {
        let r = analyze_layer(c, opts, Provenance::default()).expect("analysis");
        let j = r.jacobian.as_ref().expect("jacobians");
        let peak = j.upper_triangle().into_iter().fold(f64::NEG_INFINITY, f64::max);
        line += &format!(
            "  L{} G {:.3} J {:+.3} max {:.2}",
            c.layer_id, r.grassmann.stats.mean, j.stats.mean, peak
        );
    }
    line
}

fn main() {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "data/corpus.txt".into());
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let steps: usize = args.next().map_or(800, |s| s.parse().expect("steps"));
    let corpus = std::fs::read(&path).unwrap_or_else(|e| panic!("cannot read {path}: {e}"));
    let every = (steps / 8).max(1);

    for router in [RouterKind::top_k(2), RouterKind::soft()] {
        let config = ModelConfig {
            router,
            seed,
            ..Default::default()
        };
        let mut model = MoeTransformer::<f32>::new(config.clone()).expect("config");
        // same data stream as `train`
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut adam = Adam::new(&config, &model);
        let mut grads = MoeTransformer::<f32>::zeros(&config);
        let mut loss: Option<f64> = None;
        for step in 0..=steps {
            if step % every == 0 || step == steps {
                let loss = loss.map_or("  -  ".to_string(), |l| format!("{l:.3}"));
                println!("{router:>7} step {step:>5} loss {loss}{}", report(&model, &corpus));
            }
            if step == steps {
                break;
            }
            let (x, y) = sample_batch(&mut rng, &corpus, config.batch_size, config.block_size);
            let fwd = model.forward(&x, config.batch_size).expect("forward");
            let (l, dlogits) = model.loss(&fwd, &y);
            loss = Some(l as f64);
            grads.clear();
            model.backward(&fwd, &dlogits, &mut grads);
            drop(fwd);
            adam.step(&mut model, &grads);
        }
    }
}
