use slu_core::pipeline::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let out: String = args.get(1).cloned().unwrap_or_else(|| "/tmp/slu-x".into());
    let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(42);
    let mut config = PipelineConfig::with_seed(seed);
    if let Ok(f) = std::env::var("ATTN_LRF") { config.attn.lr_final = Some(f.parse().unwrap()); }
    let store = ArtifactStore::new(out, config).unwrap();
    for arg in args.iter().skip(3) {
        let (family, row) = arg.split_once(':').unwrap();
        let family = ModelFamily::parse_cli(family).unwrap();
        let row = Row::parse_cli(row).unwrap();
        let spec = ExperimentSpec { row, family, corpus_variant: CorpusVariant::Clean };
        let t = std::time::Instant::now();
        match store.run_experiment(&spec, true) {
            Ok(r) => println!(
                "{:>12}: F1 {:.4} intent {:.4} wer {:.4} align_err {:?} [{:.0}s]",
                spec.full_id(), r.metrics.slots.f1, r.metrics.intent_accuracy, r.metrics.wer,
                r.alignment_error.map(|a| (a.entity_error_rate * 1000.0).round() / 1000.0),
                t.elapsed().as_secs_f64()
            ),
            Err(e) => println!("{:>12}: ERROR {e}", spec.full_id()),
        }
    }
}
