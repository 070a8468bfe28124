use mbsniff::harness::{
    build_dataset, eval_ber, eval_sensing, evaluate_model, load_checkpoint, save_checkpoint,
    Dataset, ModelPipeline, OracleLevel, SompReceiver,
};
use mbsniff::scene::SamplingGrid;
use mbsniff::sigformer::{ModelConfig, ModelParams};

#[test]
fn saved_dataset_evaluates_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reduced.sums");
    let ds = build_dataset(&SamplingGrid::reduced(), 30, 9, (-5.0, 10.0)).unwrap();
    ds.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back.len(), 30);
    let a = eval_ber(None, None, &SompReceiver, &ds.records, OracleLevel::Full).unwrap();
    let b = eval_ber(None, None, &SompReceiver, &back.records, OracleLevel::Full).unwrap();
    assert_eq!(a.cells, b.cells);
}

#[test]
fn saved_model_predicts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.sumw");
    let grid = SamplingGrid::reduced();
    let cfg = ModelConfig::for_grid(&grid, 16, 2, 32, 1, 1).unwrap();
    let params = ModelParams::init(&cfg, 4, 0.05).unwrap();
    save_checkpoint(&params, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.config, params.config);
    let ds = build_dataset(&grid, 10, 2, (0.0, 10.0)).unwrap();
    let (a, b) = (ModelPipeline { params }, ModelPipeline { params: back });
    // Weights are stored as f32; the reloaded model is that rounding of the original.
    let reload = ModelPipeline {
        params: load_checkpoint(&path).unwrap(),
    };
    let (rb, rr) = (
        evaluate_model(&b, &ds.records, OracleLevel::None).unwrap(),
        evaluate_model(&reload, &ds.records, OracleLevel::None).unwrap(),
    );
    assert_eq!(rb.ss_exact_match, rr.ss_exact_match);
    assert_eq!(rb.mod_confusion, rr.mod_confusion);
    assert_eq!(rb.ber, rr.ber);
    assert_eq!(
        eval_sensing(&a, &ds.records).unwrap().overall,
        eval_sensing(&b, &ds.records).unwrap().overall
    );
}
