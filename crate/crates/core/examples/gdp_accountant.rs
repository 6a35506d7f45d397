//! Gaussian differential privacy accounting: per-step mu, composition and
//! conversion to (epsilon, delta).
//!
//! cargo run --release --example gdp_accountant

use dpsgld::accountant::{mu_to_epsilon, step_mu, Accountant, PrivacyBudget};
use dpsgld::optim::{sgld_noise_std, LrSchedule};

fn main() -> dpsgld::Result<()> {
    let (n, batch, delta) = (60_000.0, 256.0, 1e-5);
    let p = batch / n;

    println!("constant sigma: steps until epsilon = 1 at delta = {delta}");
    for sigma in [0.8, 1.1, 2.0, 4.0] {
        let mut acct = Accountant::new(PrivacyBudget::new(1.0, delta)?);
        let mu = step_mu(p, sigma)?;
        while !acct.would_exceed(mu) {
            acct.record_step(mu)?;
        }
        println!(
            "  sigma {sigma}: {} steps, mu {:.4}, epsilon {:.4}",
            acct.steps(),
            acct.mu(),
            acct.epsilon()?
        );
    }

    // a decaying learning rate shrinks the Langevin noise, so later steps
    // cost more privacy than early ones
    let schedule = LrSchedule::default();
    let tau = 50.0;
    let mut acct = Accountant::new(PrivacyBudget::new(1.0, delta)?);
    let mut t = 0;
    loop {
        let mu = step_mu(p, sgld_noise_std(schedule.rate(t), tau)?)?;
        if acct.would_exceed(mu) {
            break;
        }
        acct.record_step(mu)?;
        t += 1;
    }
    println!("DP-SGLD at tau = {tau}: {} steps before epsilon = 1", acct.steps());

    println!("\nmu -> epsilon at delta = {delta}");
    for mu in [0.1, 0.143, 0.5, 1.0, 2.0] {
        println!("  mu {mu}: epsilon {:.4}", mu_to_epsilon(mu, delta)?);
    }
    Ok(())
}
