//! Reverse-mode gradients of a small network loss against central finite
//! differences.

use vpl_lab::autodiff::{SeededRng, Tape, Tensor};

fn loss(x: &Tensor, w: &Tensor, tape: &mut Tape) -> vpl_lab::error::Result<(vpl_lab::autodiff::Var, vpl_lab::autodiff::Var)> {
    let xv = tape.leaf(x.clone());
    let wv = tape.leaf(w.clone());
    let h = tape.matmul(xv, wv)?;
    let h = tape.tanh(h);
    let p = tape.log_sigmoid(h);
    let l = tape.mean(p);
    Ok((l, wv))
}

fn main() -> vpl_lab::error::Result<()> {
    let mut rng = SeededRng::new(7);
    let x = Tensor::new(vec![4, 3], (0..12).map(|_| rng.normal()).collect())?;
    let w = Tensor::new(vec![3, 2], (0..6).map(|_| rng.normal()).collect())?;

    let mut tape = Tape::new();
    let (l, wv) = loss(&x, &w, &mut tape)?;
    let grad = tape.backward(l)?.wrt(wv);

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..w.len() {
        let eval = |delta: f64| -> vpl_lab::error::Result<f64> {
            let mut shifted = w.clone();
            shifted.data_mut()[i] += delta;
            let mut t = Tape::new();
            let (l, _) = loss(&x, &shifted, &mut t)?;
            Ok(t.value(l).item())
        };
        let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
        let ad = grad.data()[i];
        let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-12);
        worst = worst.max(rel);
        println!("w[{i}]  tape {ad:+.9}  finite difference {fd:+.9}  rel err {rel:.2e}");
    }
    println!("largest relative error {worst:.2e}");
    Ok(())
}
