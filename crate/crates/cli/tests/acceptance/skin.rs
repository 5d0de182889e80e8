use rigfield::skin_field::{decode_dense, fit_skin_embeddings, FitConfig};
use rigfield::syngen::{generate, Family, SynthSpec};
use rigfield::{Rig, SkinWeights};

use crate::{oracle, Outcome};

fn instances() -> Vec<Rig> {
    [Family::Chain, Family::Star, Family::Tree]
        .into_iter()
        .enumerate()
        .map(|(k, family)| {
            generate(&SynthSpec {
                family,
                joint_count: 3 + k % 2,
                seed: 20 + k as u64,
                ..SynthSpec::default()
            })
            .unwrap()
        })
        .collect()
}

fn fit(rig: &Rig, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let skin = SkinWeights::from_dense(rig.skeleton.len(), rows);
    let report = fit_skin_embeddings(&skin, &rig.skeleton, &FitConfig::default()).unwrap();
    assert!(report.iterations <= 5000);
    decode_dense(&report.embeddings).unwrap()
}

pub fn round_trip() -> Outcome {
    let mut pass = true;
    let (mut onehot_kl, mut uniform_l1, mut falloff_kl) = (0.0f64, 0.0f64, 0.0f64);
    let mut agree = 0;
    let mut total = 0;
    let mut sizes = Vec::new();
    for rig in instances() {
        let n = rig.skeleton.len();
        let verts = rig.mesh.vertices.len();
        pass &= n <= 4 && verts <= 500;
        sizes.push(format!("{n}j/{verts}v"));
        let falloff = rig.skin.as_ref().unwrap().to_dense();
        let onehot: Vec<Vec<f64>> = falloff
            .iter()
            .map(|row| {
                let k = oracle::argmax(row);
                (0..n).map(|j| if j == k { 1.0 } else { 0.0 }).collect()
            })
            .collect();
        let uniform = vec![vec![1.0 / n as f64; n]; verts];

        let got = fit(&rig, &onehot);
        onehot_kl = onehot_kl.max(oracle::mean_kl(&onehot, &got));
        agree += onehot
            .iter()
            .zip(&got)
            .filter(|(t, p)| oracle::argmax(t) == oracle::argmax(p))
            .count();
        total += verts;

        let got = fit(&rig, &uniform);
        uniform_l1 = uniform_l1.max(oracle::mean_l1(&uniform, &got));

        let got = fit(&rig, &falloff);
        falloff_kl = falloff_kl.max(oracle::mean_kl(&falloff, &got));
    }
    pass &= onehot_kl < 0.05 && uniform_l1 < 0.02 && falloff_kl < 0.1 && agree == total;
    Outcome::new(
        pass,
        format!(
            "instances {}; worst one-hot KL {onehot_kl:.2e}, uniform l1 {uniform_l1:.2e}, falloff KL {falloff_kl:.2e}; argmax {agree}/{total}",
            sizes.join(", ")
        ),
    )
}
