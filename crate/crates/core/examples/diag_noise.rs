use gramdep::learning::{noise_robustness_experiment, LossKind, NoiseKind};

fn main() {
    let mut sum_nmi = 0.0;
    let mut sum_mee = 0.0;
    for block in 0..3u64 {
        let r = noise_robustness_experiment(
            NoiseKind::Laplace, 2.0, &[LossKind::Mae, LossKind::Mee, LossKind::Nmi], 10, 31 + block * 7777,
        ).unwrap();
        let get = |k: LossKind| r.rows.iter().find(|x| x.loss == k).unwrap().relative_rmse;
        println!("block {block}: mae={:.3} mee={:.3} nmi={:.3}",
            get(LossKind::Mae), get(LossKind::Mee), get(LossKind::Nmi));
        sum_nmi += get(LossKind::Nmi);
        sum_mee += get(LossKind::Mee);
    }
    println!("30-seed: mee={:.3} nmi={:.3}", sum_mee / 3.0, sum_nmi / 3.0);
}
