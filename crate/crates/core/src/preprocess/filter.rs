//! IIR filter design (Butterworth, notch) as cascaded second-order sections
//! and zero-phase forward–backward application.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

/// One second-order section, `a[0]` normalized to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    fn response(&self, omega: f64) -> Complex64 {
        let e1 = Complex64::from_polar(1.0, -omega);
        let e2 = e1 * e1;
        (self.b[0] + e1 * self.b[1] + e2 * self.b[2]) / (self.a[0] + e1 * self.a[1] + e2 * self.a[2])
    }

    /// Transposed direct-form II state that makes a constant input look
    /// like it has always been present.
    fn steady_state(&self, level: f64) -> [f64; 2] {
        let g = self.dc_gain();
        let s2 = self.b[2] - self.a[2] * g;
        let s1 = self.b[1] - self.a[1] * g + s2;
        [s1 * level, s2 * level]
    }
}

/// Cascade of second-order sections.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sos {
    sections: Vec<Biquad>,
}

impl Sos {
    pub fn new(sections: Vec<Biquad>) -> Self {
        Self { sections }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn extend(&mut self, other: Sos) {
        self.sections.extend(other.sections);
    }

    /// Order of the equivalent single transfer function.
    pub fn order(&self) -> usize {
        self.sections
            .iter()
            .map(|s| if s.a[2] == 0.0 && s.b[2] == 0.0 { 1 } else { 2 })
            .sum()
    }

    /// Complex frequency response at `freq_hz` for sample rate `fs`.
    pub fn response(&self, freq_hz: f64, fs: f64) -> Complex64 {
        let omega = 2.0 * PI * freq_hz / fs;
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(omega))
    }

    /// Magnitude response of the forward–backward (zero-phase) application.
    pub fn zero_phase_gain(&self, freq_hz: f64, fs: f64) -> f64 {
        self.response(freq_hz, fs).norm_sqr()
    }

    fn scale_gain(&mut self, gain: f64) {
        if self.sections.is_empty() {
            return;
        }
        let per = gain.abs().powf(1.0 / self.sections.len() as f64);
        for s in &mut self.sections {
            for b in &mut s.b {
                *b *= per;
            }
        }
        if gain < 0.0 {
            for b in &mut self.sections[0].b {
                *b = -*b;
            }
        }
    }

    /// Single causal pass, state initialized to the steady state of `x[0]`.
    fn lfilter_steady(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let mut level = x0;
        for s in &self.sections {
            let [mut s1, mut s2] = s.steady_state(level);
            level *= s.dc_gain();
            let [b0, b1, b2] = s.b;
            let [_, a1, a2] = s.a;
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + s1;
                s1 = b1 * xin - a1 * y + s2;
                s2 = b2 * xin - a2 * y;
                *v = y;
            }
        }
    }

    /// Zero-phase filtering with odd-reflection padding of `3 × order` samples.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = (3 * self.order()).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        self.lfilter_steady(&mut ext);
        ext.reverse();
        self.lfilter_steady(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

fn prewarp(freq_hz: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * freq_hz / fs).tan()
}

fn bilinear(s: Complex64, fs: f64) -> Complex64 {
    let k = 2.0 * fs;
    (k + s) / (k - s)
}

fn butter_prototype(order: usize) -> Vec<Complex64> {
    (0..order)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

/// Groups digital poles and zeros into real-coefficient sections.
fn assemble(poles: &[Complex64], zeros: &[f64]) -> Sos {
    const IM_TOL: f64 = 1e-10;
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > IM_TOL).collect();
    let mut real: Vec<f64> = poles
        .iter()
        .filter(|p| p.im.abs() <= IM_TOL)
        .map(|p| p.re)
        .collect();
    // poles nearest the unit circle first
    complex.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    real.sort_by(|a, b| b.abs().total_cmp(&a.abs()));

    let mut zeros = zeros.iter().copied();
    let mut sections = Vec::new();
    for p in complex {
        let a = [1.0, -2.0 * p.re, p.norm_sqr()];
        let z1 = zeros.next().unwrap_or(0.0);
        let z2 = zeros.next().unwrap_or(0.0);
        sections.push(Biquad {
            b: [1.0, -(z1 + z2), z1 * z2],
            a,
        });
    }
    for pair in real.chunks(2) {
        match *pair {
            [r1, r2] => {
                let z1 = zeros.next().unwrap_or(0.0);
                let z2 = zeros.next().unwrap_or(0.0);
                sections.push(Biquad {
                    b: [1.0, -(z1 + z2), z1 * z2],
                    a: [1.0, -(r1 + r2), r1 * r2],
                });
            }
            [r] => {
                let z1 = zeros.next().unwrap_or(0.0);
                sections.push(Biquad {
                    b: [1.0, -z1, 0.0],
                    a: [1.0, -r, 0.0],
                });
            }
            _ => unreachable!(),
        }
    }
    Sos::new(sections)
}

/// Butterworth low-pass of the given order, unit gain at DC.
pub fn butter_lowpass(order: usize, cutoff_hz: f64, fs: f64) -> Sos {
    let wc = prewarp(cutoff_hz, fs);
    let poles: Vec<Complex64> = butter_prototype(order)
        .into_iter()
        .map(|p| bilinear(p * wc, fs))
        .collect();
    let zeros = vec![-1.0; order];
    let mut sos = assemble(&poles, &zeros);
    let g = sos.response(0.0, fs).norm();
    sos.scale_gain(1.0 / g);
    sos
}

/// Butterworth band-pass built from an `order`-pole low-pass prototype
/// (`2 × order` poles in total), unit gain at the band center.
pub fn butter_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Sos {
    let wl = prewarp(low_hz, fs);
    let wh = prewarp(high_hz, fs);
    let w0 = (wl * wh).sqrt();
    let bw = wh - wl;
    let mut poles = Vec::with_capacity(2 * order);
    for p in butter_prototype(order) {
        let half = p * bw / 2.0;
        let disc = (half * half - w0 * w0).sqrt();
        poles.push(bilinear(half + disc, fs));
        poles.push(bilinear(half - disc, fs));
    }
    let zeros: Vec<f64> = (0..2 * order).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let mut sos = assemble(&poles, &zeros);
    let center_hz = fs / PI * (w0 / (2.0 * fs)).atan();
    let g = sos.response(center_hz, fs).norm();
    sos.scale_gain(1.0 / g);
    sos
}

/// Second-order IIR notch at `f0_hz` with quality factor `q`.
pub fn iir_notch(f0_hz: f64, q: f64, fs: f64) -> Biquad {
    let w0 = 2.0 * PI * f0_hz / fs;
    let bw = w0 / q;
    let gain = 1.0 / (1.0 + (bw / 2.0).tan());
    let c = w0.cos();
    Biquad {
        b: [gain, -2.0 * gain * c, gain],
        a: [1.0, -2.0 * gain * c, 2.0 * gain - 1.0],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowpass_unit_dc_and_half_power_at_cutoff() {
        let sos = butter_lowpass(4, 20.0, 2000.0);
        assert!((sos.response(0.0, 2000.0).norm() - 1.0).abs() < 1e-12);
        let g = sos.response(20.0, 2000.0).norm();
        assert!((g - 0.5f64.sqrt()).abs() < 1e-9, "{g}");
        assert_eq!(sos.sections().len(), 2);
    }

    #[test]
    fn odd_order_lowpass_has_first_order_section() {
        let sos = butter_lowpass(3, 100.0, 1000.0);
        assert_eq!(sos.order(), 3);
        assert!((sos.response(100.0, 1000.0).norm() - 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn bandpass_edges_are_half_power() {
        let sos = butter_bandpass(4, 10.0, 450.0, 2000.0);
        assert_eq!(sos.order(), 8);
        for f in [10.0, 450.0] {
            let g = sos.response(f, 2000.0).norm();
            assert!((g - 0.5f64.sqrt()).abs() < 1e-6, "{f}: {g}");
        }
        assert!(sos.response(0.0, 2000.0).norm() < 1e-12);
        assert!(sos.response(999.999, 2000.0).norm() < 1e-6);
    }

    #[test]
    fn notch_zero_at_center() {
        let bq = Sos::new(vec![iir_notch(60.0, 30.0, 2000.0)]);
        assert!(bq.response(60.0, 2000.0).norm() < 1e-12);
        assert!((bq.response(0.0, 2000.0).norm() - 1.0).abs() < 1e-12);
        // -3 dB points sit half a bandwidth (1 Hz) from the center
        let g = bq.response(61.0, 2000.0).norm();
        assert!((g - 0.5f64.sqrt()).abs() < 0.01, "{g}");
    }

    #[test]
    fn filtfilt_constant_through_lowpass_is_exact() {
        let sos = butter_lowpass(4, 20.0, 2000.0);
        let y = sos.filtfilt(&[3.0; 500]);
        assert!(y.iter().all(|v| (v - 3.0).abs() < 1e-9));
    }
}
