//! Temporal binning of event streams into dense voxel grids, bidirectional
//! grid pairs, and the per-iteration sub-voxel slices the recurrent network
//! consumes.

use crate::error::{Error, Result};
use crate::event::EventStream;
use crate::image::ExposedFrame;

/// A (n+2) x H x W grid of bilinearly binned event polarities.
///
/// Bin centers span the window uniformly, with bin 0 at t_begin and bin n+1
/// at t_end. Channel-summing the grid per pixel recovers the per-pixel
/// polarity sum of the source stream.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    bins: usize,
    height: usize,
    width: usize,
    t_begin: f64,
    t_end: f64,
    data: Vec<f64>,
}

impl VoxelGrid {
    pub fn zeros(bins: usize, height: usize, width: usize, window: (f64, f64)) -> VoxelGrid {
        VoxelGrid {
            bins,
            height,
            width,
            t_begin: window.0,
            t_end: window.1,
            data: vec![0.0; bins * height * width],
        }
    }

    pub fn from_parts(
        bins: usize,
        height: usize,
        width: usize,
        window: (f64, f64),
        data: Vec<f64>,
    ) -> Result<VoxelGrid> {
        if data.len() != bins * height * width {
            return Err(Error::validation(format!(
                "voxel data length {} does not match {bins}x{height}x{width}",
                data.len()
            )));
        }
        Ok(VoxelGrid {
            bins,
            height,
            width,
            t_begin: window.0,
            t_end: window.1,
            data,
        })
    }

    #[inline]
    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Number of interpolated frames n, with bins = n + 2.
    #[inline]
    pub fn n(&self) -> usize {
        self.bins - 2
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn window(&self) -> (f64, f64) {
        (self.t_begin, self.t_end)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// One bin as an H*W slice.
    pub fn channel(&self, bin: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[bin * plane..(bin + 1) * plane]
    }

    #[inline]
    pub fn at(&self, bin: usize, y: usize, x: usize) -> f64 {
        self.data[(bin * self.height + y) * self.width + x]
    }

    pub fn total_mass(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Channel-sum at one pixel; equals that pixel's polarity sum.
    pub fn mass_at(&self, x: usize, y: usize) -> f64 {
        (0..self.bins).map(|b| self.at(b, y, x)).sum()
    }

    /// The two adjacent channels (i-1, i) feeding recurrent iteration i,
    /// borrowed without copying. Valid for 1 <= i <= n+1.
    pub fn subvoxel(&self, i: usize) -> Result<SubVoxel<'_>> {
        if i < 1 || i > self.bins - 1 {
            return Err(Error::range(format!(
                "sub-voxel index {i} outside 1..={}",
                self.bins - 1
            )));
        }
        Ok(SubVoxel {
            lo: self.channel(i - 1),
            hi: self.channel(i),
            height: self.height,
            width: self.width,
        })
    }
}

/// A borrowed 2 x H x W view of two adjacent voxel channels.
#[derive(Debug, Clone, Copy)]
pub struct SubVoxel<'a> {
    pub lo: &'a [f64],
    pub hi: &'a [f64],
    pub height: usize,
    pub width: usize,
}

/// Bins a stream into n+2 temporal channels with bilinear (tent) weights.
///
/// Each event splits its polarity between the two nearest bin centers; an
/// empty stream yields an all-zero grid.
pub fn voxelize(stream: &EventStream, n: usize) -> Result<VoxelGrid> {
    let (t_begin, t_end) = stream.window();
    let bins = n + 2;
    let height = stream.height() as usize;
    let width = stream.width() as usize;
    let mut grid = VoxelGrid::zeros(bins, height, width, (t_begin, t_end));
    if stream.is_empty() {
        return Ok(grid);
    }
    if !(t_end > t_begin) {
        return Err(Error::validation(format!(
            "cannot voxelize events over degenerate window [{t_begin}, {t_end}]"
        )));
    }
    let bin_dt = (t_end - t_begin) / (bins - 1) as f64;
    let plane = height * width;
    for e in stream.iter() {
        let u = ((e.t - t_begin) / bin_dt).clamp(0.0, (bins - 1) as f64);
        let k = u.floor() as usize;
        let frac = u - k as f64;
        let p = f64::from(e.p.sign());
        let idx = e.y as usize * width + e.x as usize;
        grid.data[k * plane + idx] += p * (1.0 - frac);
        if frac > 0.0 && k + 1 < bins {
            grid.data[(k + 1) * plane + idx] += p * frac;
        }
    }
    Ok(grid)
}

/// Forward grid from the stream as-is, backward grid from the stream
/// reversed in time and polarity.
pub fn bidirectional_pair(stream: &EventStream, n: usize) -> Result<(VoxelGrid, VoxelGrid)> {
    let forward = voxelize(stream, n)?;
    let backward = voxelize(&stream.reverse(), n)?;
    Ok((forward, backward))
}

/// Voxelizes the events inside a frame's exposure interval, producing the
/// fixed-width event channels of the image branch.
pub fn exposure_voxel(stream: &EventStream, frame: &ExposedFrame, bins: usize) -> Result<VoxelGrid> {
    if bins < 2 {
        return Err(Error::validation(format!(
            "exposure voxel needs at least 2 bins, got {bins}"
        )));
    }
    let sliced = stream.slice(frame.t_s, frame.t_e)?;
    voxelize(&sliced, bins - 2)
}

pub const EXPOSURE_VOXEL_BINS_DEFAULT: usize = 6;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Event, Polarity};
    use crate::image::Frame;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_stream(seed: u64, n: usize) -> EventStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let events: Vec<Event> = (0..n)
            .map(|_| {
                Event::new(
                    rng.gen_range(0..6),
                    rng.gen_range(0..5),
                    rng.gen_range(0.0..2.0),
                    if rng.gen_bool(0.5) {
                        Polarity::Positive
                    } else {
                        Polarity::Negative
                    },
                )
            })
            .collect();
        EventStream::from_unsorted(6, 5, (0.0, 2.0), events).unwrap()
    }

    #[test]
    fn event_at_bin_center_fills_single_bin() {
        // n = 2 -> 4 bins, centers at 0, 1/3, 2/3, 1.
        let s = EventStream::new(
            4,
            4,
            (0.0, 1.0),
            vec![Event::new(2, 1, 1.0 / 3.0, Polarity::Positive)],
        )
        .unwrap();
        let g = voxelize(&s, 2).unwrap();
        assert!((g.at(1, 1, 2) - 1.0).abs() < 1e-12);
        let total: f64 = g.data().iter().map(|v| v.abs()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn event_midway_splits_half_half() {
        let s = EventStream::new(
            4,
            4,
            (0.0, 1.0),
            vec![Event::new(0, 0, 0.5, Polarity::Positive)],
        )
        .unwrap();
        // n = 0 -> 2 bins at 0 and 1; t = 0.5 is midway.
        let g = voxelize(&s, 0).unwrap();
        assert!((g.at(0, 0, 0) - 0.5).abs() < 1e-12);
        assert!((g.at(1, 0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn event_at_window_end_lands_in_last_bin() {
        let s = EventStream::new(
            4,
            4,
            (0.0, 1.0),
            vec![Event::new(0, 0, 1.0, Polarity::Negative)],
        )
        .unwrap();
        let g = voxelize(&s, 3).unwrap();
        assert!((g.at(4, 0, 0) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn mass_conservation_against_polarity_sums() {
        for seed in 0..10 {
            let s = random_stream(seed, 500);
            for n in [0usize, 1, 3, 7] {
                let g = voxelize(&s, n).unwrap();
                for y in 0..5 {
                    for x in 0..6 {
                        let expect = s.polarity_sum((x as u16, y as u16), 0.0, 2.0).unwrap();
                        let got = g.mass_at(x, y);
                        assert!(
                            (got - expect as f64).abs() < 1e-9,
                            "pixel ({x},{y}) n={n}: {got} vs {expect}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn empty_stream_zero_grid() {
        let s = EventStream::empty(3, 3, (0.0, 1.0)).unwrap();
        let (f, b) = bidirectional_pair(&s, 2).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
        assert!(b.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_window_with_events_errors() {
        let s = EventStream::new(
            3,
            3,
            (0.5, 0.5),
            vec![Event::new(0, 0, 0.5, Polarity::Positive)],
        )
        .unwrap();
        assert!(voxelize(&s, 1).is_err());
    }

    #[test]
    fn backward_mass_negates_forward_mass() {
        let s = random_stream(42, 700);
        let (f, b) = bidirectional_pair(&s, 3).unwrap();
        assert!((f.total_mass() + b.total_mass()).abs() < 1e-9);
    }

    #[test]
    fn palindromic_stream_backward_equals_negated_forward() {
        // Event times mirror-symmetric about the window midpoint with equal
        // polarities: time reversal reproduces the times, so the polarity
        // flip makes the reversed stream the exact negation of the original.
        let events = vec![
            Event::new(1, 1, 0.2, Polarity::Positive),
            Event::new(2, 2, 0.5, Polarity::Negative),
            Event::new(1, 1, 0.8, Polarity::Positive),
        ];
        let s = EventStream::new(4, 4, (0.0, 1.0), events).unwrap();
        let (f, b) = bidirectional_pair(&s, 2).unwrap();
        for (vf, vb) in f.data().iter().zip(b.data()) {
            assert!((vf + vb).abs() < 1e-12);
        }
    }

    #[test]
    fn double_reversal_swaps_pair() {
        let s = random_stream(9, 300);
        let (f, b) = bidirectional_pair(&s, 2).unwrap();
        let (f2, b2) = bidirectional_pair(&s.reverse(), 2).unwrap();
        for (a, b_) in f.data().iter().zip(b2.data()) {
            assert!((a - b_).abs() < 1e-9);
        }
        for (a, b_) in b.data().iter().zip(f2.data()) {
            assert!((a - b_).abs() < 1e-9);
        }
    }

    #[test]
    fn subvoxel_index_arithmetic() {
        let g = VoxelGrid::zeros(4, 2, 3, (0.0, 1.0)); // n = 2
        let sv = g.subvoxel(1).unwrap();
        assert_eq!(sv.lo.as_ptr(), g.channel(0).as_ptr());
        assert_eq!(sv.hi.as_ptr(), g.channel(1).as_ptr());
        let sv = g.subvoxel(3).unwrap();
        assert_eq!(sv.lo.as_ptr(), g.channel(2).as_ptr());
        assert_eq!(sv.hi.as_ptr(), g.channel(3).as_ptr());
        assert!(g.subvoxel(0).is_err());
        assert!(g.subvoxel(4).is_err());
    }

    #[test]
    fn subvoxel_iteration_covers_interior_channels_twice() {
        let n = 3;
        let g = VoxelGrid::zeros(n + 2, 1, 1, (0.0, 1.0));
        let mut counts = vec![0usize; n + 2];
        for i in 1..=n + 1 {
            let _ = g.subvoxel(i).unwrap();
            counts[i - 1] += 1;
            counts[i] += 1;
        }
        assert_eq!(counts[0], 1);
        assert_eq!(counts[n + 1], 1);
        for c in &counts[1..=n] {
            assert_eq!(*c, 2);
        }
    }

    #[test]
    fn time_shift_equivariance() {
        let s = random_stream(5, 400);
        let g = voxelize(&s, 3).unwrap();
        let shift = 7.25;
        let shifted: Vec<Event> = s
            .iter()
            .map(|e| Event::new(e.x, e.y, e.t + shift, e.p))
            .collect();
        let s2 = EventStream::new(6, 5, (shift, 2.0 + shift), shifted).unwrap();
        let g2 = voxelize(&s2, 3).unwrap();
        for (a, b) in g.data().iter().zip(g2.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn exposure_voxel_outside_events_is_zero() {
        let events = vec![
            Event::new(0, 0, 0.05, Polarity::Positive),
            Event::new(0, 0, 0.95, Polarity::Negative),
        ];
        let s = EventStream::new(3, 3, (0.0, 1.0), events).unwrap();
        let frame = ExposedFrame::new(Frame::zeros(3, 3, 1), 0.4, 0.6).unwrap();
        let g = exposure_voxel(&s, &frame, 6).unwrap();
        assert_eq!(g.bins(), 6);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exposure_voxel_mass_matches_polarity_inside_exposure() {
        let s = random_stream(11, 600);
        let frame = ExposedFrame::new(Frame::zeros(6, 5, 1), 0.3, 1.4).unwrap();
        let g = exposure_voxel(&s, &frame, 6).unwrap();
        for y in 0..5 {
            for x in 0..6 {
                let expect = s.polarity_sum((x as u16, y as u16), 0.3, 1.4).unwrap();
                assert!((g.mass_at(x, y) - expect as f64).abs() < 1e-9);
            }
        }
    }
}
