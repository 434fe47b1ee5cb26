//! Print matched vs altered context similarities per pseudo case.
use trinity_core::config::RunConfig;
use trinity_core::data::{encode_context, read_dataset};
use trinity_core::model::{
    appearance_tensors, motion_descriptors, tokenize_descriptors, BatchInput, ForwardOutput,
    MotionInput, TrinityModel,
};
use trinity_core::numerics::checkpoint::restore_params;
use trinity_core::vq::read_codebook;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let (data_dir, model_dir) = (&args[1], &args[2]);
    let cfg = RunConfig::load(std::path::Path::new(&format!("{model_dir}/model.cfg"))).unwrap();
    let model = TrinityModel::new(cfg.model.clone(), cfg.mode, cfg.seed).unwrap();
    restore_params(
        std::path::Path::new(&format!("{model_dir}/model.ckpt")),
        &model.params(),
    )
    .unwrap();
    let cb = read_codebook(std::path::Path::new(&format!("{model_dir}/codebook.bin"))).unwrap();
    let ds = read_dataset(std::path::Path::new(data_dir)).unwrap();
    println!("case intent sim_mot_orig sim_mot_alt sim_app_orig sim_app_alt");
    for case in &ds.pseudo_cases {
        let clip = ds.clip(&case.clip_id).unwrap();
        let t = cfg.model.frames_per_tube;
        let flows = clip.gt_flow.as_ref().unwrap();
        let desc = motion_descriptors(&flows[..t - 1], &cfg.model).unwrap();
        let motion = MotionInput::Tokens(vec![tokenize_descriptors(&desc, &cb).unwrap()]);
        let (ai, at) = appearance_tensors(&[&clip.frames[..t]], &cfg.model).unwrap();
        let mut sims = Vec::new();
        for ctx in [&case.original, &case.altered] {
            let batch = BatchInput {
                contexts: vec![encode_context(ctx, &cfg.model.context_layout).unwrap()],
                motion: motion.clone(),
                appearance_input: ai.reshape(ai.shape()).unwrap(),
                appearance_target: at.reshape(at.shape()).unwrap(),
            };
            let out = trinity_core::numerics::no_grad(|| model.forward(&batch).unwrap());
            let cxt = ForwardOutput::global(out.h_cxt.as_ref().unwrap()).unwrap().value();
            let mot = ForwardOutput::global(&out.h_mot).unwrap().value();
            let app = ForwardOutput::global(&out.h_app).unwrap().value();
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            sims.push((dot(&cxt, &mot), dot(&cxt, &app)));
        }
        println!(
            "{} {} {:+.3} {:+.3} {:+.3} {:+.3}",
            case.clip_id, case.intent, sims[0].0, sims[1].0, sims[0].1, sims[1].1
        );
    }
}
