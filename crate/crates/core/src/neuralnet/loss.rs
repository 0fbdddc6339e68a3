/// Mean smooth-L1 loss and its gradient w.r.t. `pred`.
///
/// Per element with `d = pred - target`: `0.5·d²/β` when `|d| < β`, otherwise
/// `|d| - 0.5·β`.
pub fn smooth_l1(pred: &[f64], target: &[f64], beta: f64) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), target.len(), "smooth_l1 shape mismatch");
    assert!(beta > 0.0, "smooth_l1 needs beta > 0");
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            if d.abs() < beta {
                loss += 0.5 * d * d / beta;
                d / beta / n
            } else {
                loss += d.abs() - 0.5 * beta;
                d.signum() / n
            }
        })
        .collect();
    (loss / n, grad)
}
