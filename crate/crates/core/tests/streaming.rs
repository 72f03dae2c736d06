use entangle_core::chsh::{BinnedBatch, ThresholdBinning};
use entangle_core::homodyne::{read_batch, sample_batch, write_batch, CHUNK_SIZE};
use entangle_core::tomography::{BinCounts, QuadratureBins};
use entangle_core::{BatchPlan, MeasurementSettings, Noise, Pipeline, Source};

fn plan(source: Source, pipeline: Pipeline, count: usize) -> BatchPlan {
    let noise = Noise::new(0.617, 2.0 / 3.0).unwrap();
    BatchPlan::new(source, MeasurementSettings::chsh(1, 0), count, &noise, pipeline, 42).unwrap()
}

#[test]
fn windows_reproduce_the_materialized_batch() {
    let count = 2 * CHUNK_SIZE + 123;
    for (source, pipeline) in [
        (Source::Coherent { mu: 0.5 }, Pipeline::Physical),
        (Source::Coherent { mu: 0.5 }, Pipeline::IdealFock),
        (Source::Fock { n: 2 }, Pipeline::IdealFock),
    ] {
        let p = plan(source, pipeline, count).with_intensity_label(3);
        let whole = p.generate().unwrap();
        for window in [1, 2, 64] {
            let mut streamed = Vec::new();
            p.for_each_window(
                window,
                |r| r.to_vec(),
                |c| {
                    streamed.extend(c);
                    Ok(())
                },
            )
            .unwrap();
            assert_eq!(streamed, whole.records, "{pipeline} window {window}");
        }
        assert!(whole.records.iter().all(|r| r.intensity_label == 3 && r.setting_a == 1 && r.setting_b == 0));
    }
}

#[test]
fn plan_matches_sample_batch() {
    let noise = Noise::new(0.617, 2.0 / 3.0).unwrap();
    let s = MeasurementSettings::chsh(1, 0);
    let a = sample_batch(Source::Coherent { mu: 0.2 }, s, 5000, &noise, Pipeline::Equivalent, 42).unwrap();
    let b = plan(Source::Coherent { mu: 0.2 }, Pipeline::Equivalent, 5000).generate().unwrap();
    assert_eq!(a, b);
}

#[test]
fn streamed_reductions_equal_batch_reductions() {
    let p = plan(Source::Coherent { mu: 0.9 }, Pipeline::Equivalent, CHUNK_SIZE + 999);
    let batch = p.generate().unwrap();
    let grid = [0.0, 0.5, 0.82, 1.0];
    let mut acc = BinnedBatch::on_grid(&grid);
    let bins = QuadratureBins::uniform(5.0, 0.5).unwrap();
    let mut counts = BinCounts::new(&bins);
    p.for_each_window(
        3,
        |r| (r.to_vec(), BinCounts::from_records(r, &bins)),
        |(r, c)| {
            acc.accumulate(&r);
            counts.add(&c);
            Ok(())
        },
    )
    .unwrap();
    let exact = BinnedBatch::from_records(&batch.records);
    for t in grid {
        let b = ThresholdBinning::new(t).unwrap();
        assert_eq!(acc.counts(b).unwrap(), exact.counts(b).unwrap());
    }
    assert_eq!(counts, BinCounts::from_records(&batch.records, &bins));
    assert_eq!(counts.total(), batch.len() as u64);
}

#[test]
fn batch_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.csv");
    let batch = plan(Source::Coherent { mu: 0.3 }, Pipeline::Physical, 777).with_intensity_label(2).generate().unwrap();
    write_batch(&path, &batch).unwrap();
    assert_eq!(read_batch(&path).unwrap(), batch);
}
