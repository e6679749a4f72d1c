//! Fits a small ELU network to a 1-D function with Adam and round-trips a checkpoint.

use volwmc::nn::{mse_loss_and_grad, Activation, AdamConfig, AdamState, DenseNet};

fn main() -> volwmc::Result<()> {
    let mut net = DenseNet::new(&[1, 16, 16, 1], &[Activation::Elu, Activation::Elu, Activation::Linear], 1)?;
    let xs: Vec<f64> = (0..64).map(|i| -2.0 + 4.0 * i as f64 / 63.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| (1.5 * x).sin()).collect();
    let mut adam = AdamState::new(&net, AdamConfig::with_lr(0.01));
    for epoch in 0..=2000 {
        let (loss, grads) = mse_loss_and_grad(&net, &xs, &ys, xs.len())?;
        if epoch % 400 == 0 {
            println!("epoch {epoch:>4}  mse {loss:.3e}");
        }
        adam.step(&mut net, &grads)?;
    }
    let copy = DenseNet::from_json(&net.to_json()?)?;
    assert_eq!(copy.parameter_hash(), net.parameter_hash());
    println!("f(0.5) ≈ {:.4} (sin 0.75 = {:.4})", net.forward(&[0.5])?[0], 0.75f64.sin());
    Ok(())
}
