use crate::error::{Error, Result};
use crate::scene::{ColorHistogram, MatchParams, MaskRecord};

/// Cosine similarity, evaluated in f64.
pub fn similarity_clip(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "embedding lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    if !(aa > 0.0 && bb > 0.0) {
        return Err(Error::domain("cosine similarity of a zero-norm embedding"));
    }
    Ok((dot / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

/// Bhattacharyya coefficient of two color histograms.
///
/// Divided by the square root of both totals, so a histogram compared with
/// itself gives exactly 1 despite f32 rounding of its bins.
pub fn similarity_color(a: &ColorHistogram, b: &ColorHistogram) -> Result<f64> {
    for h in [a, b] {
        if !h.is_normalized() {
            return Err(Error::domain(format!(
                "histogram not normalized (sum {})",
                h.sum()
            )));
        }
    }
    let (mut bc, mut sa, mut sb) = (0.0f64, 0.0f64, 0.0f64);
    for (&p, &q) in a.bins().iter().zip(b.bins()) {
        let (p, q) = (p as f64, q as f64);
        bc += (p * q).sqrt();
        sa += p;
        sb += q;
    }
    Ok((bc / (sa * sb).sqrt()).clamp(0.0, 1.0))
}

/// `alpha * color + (1 - alpha) * cosine`. With `alpha == 0` the color
/// term is not evaluated and histograms may be absent.
pub fn similarity_hybrid(a: &MaskRecord, b: &MaskRecord, params: &MatchParams) -> Result<f64> {
    let clip = similarity_clip(&a.embedding, &b.embedding)?;
    if params.alpha == 0.0 {
        return Ok(clip);
    }
    let (ha, hb) = match (&a.histogram, &b.histogram) {
        (Some(ha), Some(hb)) => (ha, hb),
        _ => {
            return Err(Error::contract(format!(
                "mask ({}, {}) or ({}, {}) has no color histogram",
                a.view, a.local, b.view, b.local
            )))
        }
    };
    let color = similarity_color(ha, hb)?;
    Ok(params.alpha * color + (1.0 - params.alpha) * clip)
}
