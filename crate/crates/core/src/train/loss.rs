/// Mean squared deviation between predicted denoise offsets and the negated
/// applied offsets: `(1/N) * sum ||pred_i + applied_i||^2`.
///
/// Returns `None` for an empty set; such images are skipped by the trainer.
pub fn offset_loss(predicted: &[(f64, f64)], applied: &[(f64, f64)]) -> Option<f64> {
    assert_eq!(
        predicted.len(),
        applied.len(),
        "one prediction per applied offset"
    );
    if predicted.is_empty() {
        return None;
    }
    let total: f64 = predicted
        .iter()
        .zip(applied)
        .map(|(p, o)| {
            let ex = p.0 + o.0;
            let ey = p.1 + o.1;
            ex * ex + ey * ey
        })
        .sum();
    Some(total / predicted.len() as f64)
}
