//! Event records, time-sorted streams, and the stream algebra
//! (slicing, time/polarity reversal, per-pixel polarity sums).

use crate::error::{Error, Result};

/// Sign of the log-intensity change that triggered an event.
///
/// Exactly two states; a zero polarity cannot be represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(i8)]
pub enum Polarity {
    Negative = -1,
    Positive = 1,
}

impl Polarity {
    pub fn from_i8(value: i8) -> Option<Polarity> {
        match value {
            -1 => Some(Polarity::Negative),
            1 => Some(Polarity::Positive),
            _ => None,
        }
    }

    #[inline]
    pub fn sign(self) -> i8 {
        self as i8
    }

    #[inline]
    pub fn flip(self) -> Polarity {
        match self {
            Polarity::Negative => Polarity::Positive,
            Polarity::Positive => Polarity::Negative,
        }
    }
}

/// A single sensor event: pixel coordinates, timestamp in seconds, polarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    /// Pixel column, 0 <= x < width.
    pub x: u16,
    /// Pixel row, 0 <= y < height.
    pub y: u16,
    /// Timestamp in seconds, finite.
    pub t: f64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: f64, p: Polarity) -> Event {
        Event { x, y, t, p }
    }
}

/// A time-sorted event sequence over a fixed sensor geometry and time window.
///
/// Streams are immutable after construction; every operation returns a new
/// stream. Events with equal timestamps keep their insertion order, so all
/// derived quantities are deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    t_begin: f64,
    t_end: f64,
    width: u16,
    height: u16,
}

impl EventStream {
    /// Builds a stream from already-sorted events, validating every invariant.
    pub fn new(
        width: u16,
        height: u16,
        window: (f64, f64),
        events: Vec<Event>,
    ) -> Result<EventStream> {
        let stream = EventStream {
            events,
            t_begin: window.0,
            t_end: window.1,
            width,
            height,
        };
        stream.validate()?;
        Ok(stream)
    }

    /// Builds a stream from events in arbitrary order. The sort is stable, so
    /// ties at equal timestamps preserve the input order.
    pub fn from_unsorted(
        width: u16,
        height: u16,
        window: (f64, f64),
        mut events: Vec<Event>,
    ) -> Result<EventStream> {
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        EventStream::new(width, height, window, events)
    }

    pub fn empty(width: u16, height: u16, window: (f64, f64)) -> Result<EventStream> {
        EventStream::new(width, height, window, Vec::new())
    }

    /// Validator walk over the full stream: window sanity, sensor bounds,
    /// sort order, finite timestamps.
    pub fn validate(&self) -> Result<()> {
        if !self.t_begin.is_finite() || !self.t_end.is_finite() {
            return Err(Error::validation("stream window must be finite"));
        }
        if self.t_begin > self.t_end {
            return Err(Error::validation(format!(
                "stream window [{}, {}] is reversed",
                self.t_begin, self.t_end
            )));
        }
        let mut prev_t = f64::NEG_INFINITY;
        for (i, e) in self.events.iter().enumerate() {
            if !e.t.is_finite() {
                return Err(Error::validation(format!(
                    "event {i} has non-finite timestamp"
                )));
            }
            if e.t < self.t_begin || e.t > self.t_end {
                return Err(Error::validation(format!(
                    "event {i} at t={} outside window [{}, {}]",
                    e.t, self.t_begin, self.t_end
                )));
            }
            if e.x >= self.width || e.y >= self.height {
                return Err(Error::validation(format!(
                    "event {i} at ({}, {}) outside {}x{} sensor",
                    e.x, e.y, self.width, self.height
                )));
            }
            if e.t < prev_t {
                return Err(Error::validation(format!(
                    "event {i} breaks ascending time order"
                )));
            }
            prev_t = e.t;
        }
        Ok(())
    }

    #[inline]
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.events.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    #[inline]
    pub fn window(&self) -> (f64, f64) {
        (self.t_begin, self.t_end)
    }

    #[inline]
    pub fn width(&self) -> u16 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Event> {
        self.events.iter()
    }

    /// Index of the first event with t > a (events are sorted).
    fn partition_after(&self, a: f64) -> usize {
        self.events.partition_point(|e| e.t <= a)
    }

    /// Events with a < t <= b, re-windowed to [a, b].
    ///
    /// The interval is half-open on the left so that abutting slices count
    /// every event exactly once.
    pub fn slice(&self, a: f64, b: f64) -> Result<EventStream> {
        if !(self.t_begin <= a && a <= b && b <= self.t_end) {
            return Err(Error::range(format!(
                "slice [{a}, {b}] outside stream window [{}, {}]",
                self.t_begin, self.t_end
            )));
        }
        let lo = self.partition_after(a);
        let hi = self.partition_after(b);
        Ok(EventStream {
            events: self.events[lo..hi].to_vec(),
            t_begin: a,
            t_end: b,
            width: self.width,
            height: self.height,
        })
    }

    /// Reverses the stream in time and polarity: (x, y, t, p) maps to
    /// (x, y, t_begin + t_end - t, -p). The window is unchanged and the
    /// result is re-sorted ascending.
    pub fn reverse(&self) -> EventStream {
        let pivot = self.t_begin + self.t_end;
        let mut events: Vec<Event> = self
            .events
            .iter()
            .rev()
            .map(|e| Event::new(e.x, e.y, pivot - e.t, e.p.flip()))
            .collect();
        // Mapped times are descending before the rev() above; the stable
        // sort only has to fix ties and float round-off at the pivot.
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        EventStream {
            events,
            t_begin: self.t_begin,
            t_end: self.t_end,
            width: self.width,
            height: self.height,
        }
    }

    /// Signed polarity count at one pixel over (a, b].
    pub fn polarity_sum(&self, pixel: (u16, u16), a: f64, b: f64) -> Result<i64> {
        let (x, y) = pixel;
        if x >= self.width || y >= self.height {
            return Err(Error::range(format!(
                "pixel ({x}, {y}) outside {}x{} sensor",
                self.width, self.height
            )));
        }
        if !(self.t_begin <= a && a <= b && b <= self.t_end) {
            return Err(Error::range(format!(
                "interval [{a}, {b}] outside stream window [{}, {}]",
                self.t_begin, self.t_end
            )));
        }
        let lo = self.partition_after(a);
        let hi = self.partition_after(b);
        Ok(self.events[lo..hi]
            .iter()
            .filter(|e| e.x == x && e.y == y)
            .map(|e| i64::from(e.p.sign()))
            .sum())
    }

    /// Total signed polarity over the whole stream.
    pub fn total_polarity(&self) -> i64 {
        self.events.iter().map(|e| i64::from(e.p.sign())).sum()
    }

    /// Per-pixel polarity sums over (a, b], accumulated in one pass.
    /// Row-major layout, height * width entries.
    pub fn polarity_image(&self, a: f64, b: f64) -> Result<Vec<i64>> {
        if !(self.t_begin <= a && a <= b && b <= self.t_end) {
            return Err(Error::range(format!(
                "interval [{a}, {b}] outside stream window [{}, {}]",
                self.t_begin, self.t_end
            )));
        }
        let mut sums = vec![0i64; self.width as usize * self.height as usize];
        let lo = self.partition_after(a);
        let hi = self.partition_after(b);
        for e in &self.events[lo..hi] {
            sums[e.y as usize * self.width as usize + e.x as usize] += i64::from(e.p.sign());
        }
        Ok(sums)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_stream(seed: u64, n: usize) -> EventStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let events: Vec<Event> = (0..n)
            .map(|_| {
                Event::new(
                    rng.gen_range(0..8),
                    rng.gen_range(0..8),
                    rng.gen_range(0.0..1.0),
                    if rng.gen_bool(0.5) {
                        Polarity::Positive
                    } else {
                        Polarity::Negative
                    },
                )
            })
            .collect();
        EventStream::from_unsorted(8, 8, (0.0, 1.0), events).unwrap()
    }

    fn multiset(stream: &EventStream) -> Vec<(u16, u16, u64, i8)> {
        let mut v: Vec<_> = stream
            .events()
            .iter()
            .map(|e| (e.x, e.y, e.t.to_bits(), e.p.sign()))
            .collect();
        v.sort();
        v
    }

    #[test]
    fn slice_empty_interval() {
        let s = random_stream(1, 100);
        let sl = s.slice(0.4, 0.4).unwrap();
        assert!(sl.is_empty());
        assert_eq!(sl.window(), (0.4, 0.4));
    }

    #[test]
    fn slice_half_open_boundaries() {
        let events = vec![
            Event::new(0, 0, 0.1, Polarity::Positive),
            Event::new(0, 0, 0.2, Polarity::Positive),
            Event::new(0, 0, 0.3, Polarity::Negative),
        ];
        let s = EventStream::new(4, 4, (0.0, 1.0), events).unwrap();
        let sl = s.slice(0.1, 0.3).unwrap();
        let ts: Vec<f64> = sl.events().iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![0.2, 0.3]);
    }

    #[test]
    fn slice_outside_window_is_range_error() {
        let s = random_stream(2, 10);
        assert!(matches!(s.slice(-0.1, 0.5), Err(Error::Range(_))));
        assert!(matches!(s.slice(0.5, 1.5), Err(Error::Range(_))));
        assert!(matches!(s.slice(0.6, 0.5), Err(Error::Range(_))));
    }

    #[test]
    fn slice_partition_matches_brute_force_filter() {
        // Oracle: plain linear filter with the same (a, b] convention.
        let s = random_stream(3, 1000);
        let (a, m, b) = (0.2, 0.55, 0.9);
        let left = s.slice(a, m).unwrap();
        let right = s.slice(m, b).unwrap();
        let mut joined: Vec<Event> = left.events().to_vec();
        joined.extend_from_slice(right.events());
        let brute: Vec<Event> = s
            .events()
            .iter()
            .filter(|e| e.t > a && e.t <= b)
            .copied()
            .collect();
        assert_eq!(joined.len(), brute.len());
        let direct = s.slice(a, b).unwrap();
        assert_eq!(direct.events(), joined.as_slice());
        assert_eq!(direct.events(), brute.as_slice());
    }

    #[test]
    fn reverse_empty() {
        let s = EventStream::empty(4, 4, (0.0, 1.0)).unwrap();
        assert!(s.reverse().is_empty());
    }

    #[test]
    fn reverse_single_event() {
        let s = EventStream::new(
            8,
            8,
            (0.0, 1.0),
            vec![Event::new(3, 4, 0.2, Polarity::Positive)],
        )
        .unwrap();
        let r = s.reverse();
        let e = r.events()[0];
        assert_eq!((e.x, e.y), (3, 4));
        assert!((e.t - 0.8).abs() < 1e-15);
        assert_eq!(e.p, Polarity::Negative);
        assert_eq!(r.window(), (0.0, 1.0));
    }

    #[test]
    fn reverse_involution_multiset() {
        for seed in 0..20 {
            let s = random_stream(seed, 500);
            let rr = s.reverse().reverse();
            assert_eq!(multiset(&rr), multiset(&s));
            rr.validate().unwrap();
        }
    }

    #[test]
    fn reverse_negates_total_polarity() {
        let s = random_stream(7, 321);
        assert_eq!(s.reverse().total_polarity(), -s.total_polarity());
        assert_eq!(s.reverse().len(), s.len());
    }

    #[test]
    fn polarity_sum_no_events_is_zero() {
        let s = EventStream::empty(4, 4, (0.0, 1.0)).unwrap();
        assert_eq!(s.polarity_sum((2, 2), 0.0, 1.0).unwrap(), 0);
    }

    #[test]
    fn polarity_sum_arithmetic() {
        let events = vec![
            Event::new(1, 1, 0.1, Polarity::Positive),
            Event::new(1, 1, 0.2, Polarity::Positive),
            Event::new(1, 1, 0.3, Polarity::Negative),
        ];
        let s = EventStream::new(4, 4, (0.0, 1.0), events).unwrap();
        assert_eq!(s.polarity_sum((1, 1), 0.0, 1.0).unwrap(), 1);
    }

    #[test]
    fn polarity_sum_pixel_out_of_range() {
        let s = random_stream(4, 10);
        assert!(matches!(
            s.polarity_sum((8, 0), 0.0, 1.0),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn polarity_sum_matches_naive_loop() {
        let s = random_stream(5, 1000);
        let (a, b) = (0.25, 0.75);
        for y in 0..8u16 {
            for x in 0..8u16 {
                let naive: i64 = s
                    .events()
                    .iter()
                    .filter(|e| e.x == x && e.y == y && e.t > a && e.t <= b)
                    .map(|e| i64::from(e.p.sign()))
                    .sum();
                assert_eq!(s.polarity_sum((x, y), a, b).unwrap(), naive);
            }
        }
    }

    #[test]
    fn polarity_image_matches_per_pixel_sums() {
        let s = random_stream(6, 800);
        let img = s.polarity_image(0.1, 0.9).unwrap();
        for y in 0..8u16 {
            for x in 0..8u16 {
                assert_eq!(
                    img[y as usize * 8 + x as usize],
                    s.polarity_sum((x, y), 0.1, 0.9).unwrap()
                );
            }
        }
    }

    #[test]
    fn equal_timestamps_keep_insertion_order() {
        let events = vec![
            Event::new(0, 0, 0.5, Polarity::Positive),
            Event::new(1, 0, 0.5, Polarity::Negative),
            Event::new(2, 0, 0.5, Polarity::Positive),
        ];
        let s = EventStream::from_unsorted(4, 4, (0.0, 1.0), events.clone()).unwrap();
        assert_eq!(s.events(), events.as_slice());
    }

    #[test]
    fn construction_rejects_bad_events() {
        let out_of_window = vec![Event::new(0, 0, 2.0, Polarity::Positive)];
        assert!(EventStream::new(4, 4, (0.0, 1.0), out_of_window).is_err());
        let off_sensor = vec![Event::new(4, 0, 0.5, Polarity::Positive)];
        assert!(EventStream::new(4, 4, (0.0, 1.0), off_sensor).is_err());
        let unsorted = vec![
            Event::new(0, 0, 0.9, Polarity::Positive),
            Event::new(0, 0, 0.1, Polarity::Positive),
        ];
        assert!(EventStream::new(4, 4, (0.0, 1.0), unsorted).is_err());
    }
}
