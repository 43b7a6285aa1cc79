//! Segmentation and decomposition metrics.

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

/// Per-pixel argmax over channels; ties go to the lowest class id.
pub fn argmax_labels(channels: &[ImageGrid]) -> ImageGrid {
    let first = &channels[0];
    let data = (0..first.len())
        .map(|i| {
            let mut best = 0;
            for (c, ch) in channels.iter().enumerate().skip(1) {
                if ch.data()[i] > channels[best].data()[i] {
                    best = c;
                }
            }
            best as f64
        })
        .collect();
    ImageGrid::new(first.width(), first.height(), data).expect("class ids are finite")
}

/// Dice overlap `2|A∩B|/(|A|+|B|)` of one class; 1 when both masks are empty.
pub fn dice(pred: &ImageGrid, gt: &ImageGrid, class_id: usize) -> Result<f64> {
    pred.ensure_shape(gt)?;
    let c = class_id as f64;
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        a += (p == c) as usize;
        b += (g == c) as usize;
        both += (p == c && g == c) as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (a + b) as f64)
}

/// Dice for classes `0..k` followed by their average.
pub fn dice_report(pred: &ImageGrid, gt: &ImageGrid, k: usize) -> Result<(Vec<f64>, f64)> {
    let per = (0..k).map(|c| dice(pred, gt, c)).collect::<Result<Vec<_>>>()?;
    let avg = per.iter().sum::<f64>() / k as f64;
    Ok((per, avg))
}

/// Pearson correlation of two equally shaped grids.
pub fn correlation(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    a.ensure_shape(b)?;
    let (ma, mb) = (a.mean(), b.mean());
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Invalid("correlation of a constant field".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Separable Gaussian blur with mirrored borders.
pub fn lowpass(f: &ImageGrid, sigma: f64) -> ImageGrid {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let (w, h) = (f.width() as isize, f.height() as isize);
    let mirror = |i: isize, n: isize| -> usize {
        let period = 2 * n;
        let j = i.rem_euclid(period);
        (if j < n { j } else { period - 1 - j }) as usize
    };
    let pass = |src: &ImageGrid, horizontal: bool| {
        ImageGrid::from_fn(src.width(), src.height(), |r, c| {
            let mut acc = 0.0;
            for (t, kv) in (-radius..=radius).zip(&kernel) {
                let v = if horizontal {
                    src.get(r, mirror(c as isize + t, w))
                } else {
                    src.get(mirror(r as isize + t, h), c)
                };
                acc += kv * v;
            }
            acc / norm
        })
    };
    pass(&pass(f, true), false)
}

/// 1 where a 4-neighbour carries a different label, else 0.
pub fn edge_mask(labels: &ImageGrid) -> ImageGrid {
    let (w, h) = (labels.width(), labels.height());
    ImageGrid::from_fn(w, h, |r, c| {
        let v = labels.get(r, c);
        let differs = (r > 0 && labels.get(r - 1, c) != v)
            || (r + 1 < h && labels.get(r + 1, c) != v)
            || (c > 0 && labels.get(r, c - 1) != v)
            || (c + 1 < w && labels.get(r, c + 1) != v);
        differs as u8 as f64
    })
}

/// Median of the entries where `mask` equals `on`. `None` when empty.
pub fn masked_median(f: &ImageGrid, mask: &ImageGrid, on: bool) -> Option<f64> {
    let mut v: Vec<f64> = f
        .data()
        .iter()
        .zip(mask.data())
        .filter(|(_, &m)| (m != 0.0) == on)
        .map(|(&x, _)| x)
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dice_examples() {
        let a = ImageGrid::from_fn(20, 10, |r, _| (r < 5) as u8 as f64);
        assert_eq!(dice(&a, &a, 1).unwrap(), 1.0);
        let b = a.map(|v| 1.0 - v);
        assert_eq!(dice(&a, &b, 1).unwrap(), 0.0);
        // |A| = |B| = 100 with 60 shared pixels
        let p = ImageGrid::from_fn(20, 10, |r, c| (r * 20 + c < 100) as u8 as f64);
        let g = ImageGrid::from_fn(20, 10, |r, c| (r * 20 + c >= 40 && r * 20 + c < 140) as u8 as f64);
        assert!((dice(&p, &g, 1).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(dice(&a, &a, 7).unwrap(), 1.0);
        assert!(dice(&a, &ImageGrid::zeros(3, 3), 1).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        let a = ImageGrid::new(3, 1, vec![1.0, 0.0, 2.0]).unwrap();
        let b = ImageGrid::new(3, 1, vec![1.0, 5.0, 2.0]).unwrap();
        let c = ImageGrid::new(3, 1, vec![0.0, 5.0, 2.0]).unwrap();
        assert_eq!(argmax_labels(&[a, b, c]).data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn lowpass_keeps_constants_and_mean() {
        let f = ImageGrid::filled(9, 7, 3.5);
        assert!(lowpass(&f, 2.0).data().iter().all(|&v| (v - 3.5).abs() < 1e-12));
        let g = ImageGrid::from_fn(16, 16, |r, c| ((r * 16 + c) % 5) as f64);
        let s = lowpass(&g, 3.0);
        assert!(s.max() - s.min() < g.max() - g.min());
    }

    #[test]
    fn correlation_and_edges() {
        let a = ImageGrid::from_fn(4, 4, |r, c| (r + c) as f64);
        assert!((correlation(&a, &a.map(|v| 2.0 * v + 1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((correlation(&a, &a.map(|v| -v)).unwrap() + 1.0).abs() < 1e-12);
        let l = ImageGrid::from_fn(4, 1, |_, c| (c >= 2) as u8 as f64);
        assert_eq!(edge_mask(&l).data(), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(masked_median(&l, &edge_mask(&l.map(|_| 0.0)), true), None);
        assert_eq!(masked_median(&l, &edge_mask(&l), true), Some(0.5));
    }
}
