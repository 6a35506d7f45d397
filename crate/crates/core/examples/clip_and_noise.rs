//! Clipping, pre-noising and the noisy aggregate that DP-SGD and DP-SGLD
//! share, plus the temperature that makes the two coincide.
//!
//! cargo run --release --example clip_and_noise

use dpsgld::optim::{clip_in_place, sgld_noise_std, temperature_matching, LrSchedule};

fn main() -> dpsgld::Result<()> {
    let clip = 1.0;
    for g in [vec![0.3, 0.4], vec![3.0, 4.0], vec![-12.0, 5.0]] {
        let mut clipped = g.clone();
        let norm = clip_in_place(&mut clipped, clip)?;
        println!("{g:?} (norm {norm}) -> {clipped:?}");
    }

    let schedule = LrSchedule::default();
    let tau = 8.0;
    println!("\nDP-SGLD noise multiplier sqrt(2 lr_t tau) at tau = {tau}:");
    for t in [0, 10, 100, 1000, 10_000] {
        let lr = schedule.rate(t);
        println!("  step {t:>5}: lr {lr:.4}, sigma {:.4}", sgld_noise_std(lr, tau)?);
    }

    let (sigma, lr) = (1.1, 0.25);
    let matched = temperature_matching(sigma, lr);
    println!(
        "\nDP-SGD with sigma = {sigma} at lr = {lr} equals DP-SGLD at tau = {matched:.4} (sigma back: {:.4})",
        sgld_noise_std(lr, matched)?
    );
    Ok(())
}
