use trunet::{grid_search, prepare, DataPlan, Grid, OptimizerConfig, TrainConfig};
use trunet_core::data::{synth_generate, SyntheticConfig};
use trunet_core::model::{ModelConfig, TruNetConfig};
use trunet_core::objective::LossKind;

#[test]
fn zero_learning_rate_never_ranks_first() {
    let series = synth_generate::<f32>(&SyntheticConfig::micro(6), 300).unwrap();
    let config = ModelConfig::TruNet(TruNetConfig::micro(true));
    let plan = DataPlan { per_side: 3, stride: 14, ..DataPlan::default() };
    let data = prepare(&series, &config, &plan, None).unwrap();
    let opt = OptimizerConfig { beta2: 0.99, warmup_steps: 10, ..OptimizerConfig::trunet_cc() };
    let base = TrainConfig { epochs: 3, ..TrainConfig::new(LossKind::Cc, opt, 6) };
    let grid = Grid::parse("learning_rate=0,0.003").unwrap();
    let trials = grid_search(&grid, 2, &config, 6, &base, &data.splits.train, &data.splits.val).unwrap();
    assert_eq!(trials.len(), 2);
    assert_eq!(trials[0].settings.optimizer.learning_rate, 0.003);
    let r10: Vec<f64> = trials.iter().map(|t| t.report.all.r10_rmse.unwrap()).collect();
    assert!(r10[0] <= r10[1], "{r10:?}");
}
