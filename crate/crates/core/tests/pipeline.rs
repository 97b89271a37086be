use blockspin::io::{load_batch, load_partition, save_batch, write_partition, BatchFormat};
use blockspin::recovery::RecoverOptions;
use blockspin::{exact_sample, recover, recovery_error, ModelParams, Partition, SeedSpec, WeightTable};
use tempfile::TempDir;

#[test]
fn sample_save_load_recover() {
    let dir = TempDir::new().unwrap();
    let params = ModelParams::new(32, -0.5, 1.5).unwrap();
    let table = WeightTable::build(&params).unwrap();
    let truth = Partition::random(32, &mut SeedSpec::new(3, 0).rng()).unwrap();
    let batch = exact_sample(&table, &truth, SeedSpec::new(3, 1), 4000).unwrap();

    let truth_path = dir.path().join("truth.txt");
    write_partition(&truth, std::fs::File::create(&truth_path).unwrap()).unwrap();
    assert_eq!(load_partition(&truth_path).unwrap(), truth);

    let opts = RecoverOptions { refine: true, ..Default::default() };
    let direct = recover(&batch, &opts).unwrap();
    for (name, format) in [("b.csv", BatchFormat::Csv), ("b.bin", BatchFormat::Binary)] {
        let path = dir.path().join(name);
        save_batch(&batch, &path, format).unwrap();
        let loaded = load_batch(&path).unwrap();
        assert_eq!(loaded.seed(), batch.seed());
        let r = recover(&loaded, &opts).unwrap();
        assert_eq!(r.estimate, direct.estimate);
        assert_eq!(r.objective, direct.objective);
    }
    assert_eq!(recovery_error(&direct.estimate, &truth).unwrap(), 0.0);
}

#[test]
fn subcritical_samples_carry_no_signal() {
    // With beta < 1 and alpha = 0 the blocks decouple; recovery should be
    // no better than a coin flip per site on average.
    let params = ModelParams::new(64, 0.0, 0.5).unwrap();
    let table = WeightTable::build(&params).unwrap();
    let mut errs = 0.0;
    for t in 0..10 {
        let truth = Partition::random(64, &mut SeedSpec::new(t, 0).rng()).unwrap();
        let batch = exact_sample(&table, &truth, SeedSpec::new(t, 1), 200).unwrap();
        errs += recovery_error(&recover(&batch, &RecoverOptions::default()).unwrap().estimate, &truth).unwrap();
    }
    assert!(errs / 10.0 > 0.25, "mean error {}", errs / 10.0);
}
