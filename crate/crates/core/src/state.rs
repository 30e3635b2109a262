//! Navigation state of one keyframe and its error-state parameterization.

use std::fmt;
use std::str::FromStr;

use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{GeomError, Rotation};

/// Speed of light (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Magnitude of the constant gravity model (m/s²).
pub const GRAVITY: f64 = 9.81;

/// Gravity vector in the world frame.
pub fn gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -GRAVITY)
}

/// Number of GNSS constellations carried in the receiver clock vector.
pub const NUM_CONSTELLATIONS: usize = 4;

/// Error-state layout of one keyframe:
/// `[δp(3) δv(3) δθ(3) δb_a(3) δb_g(3) δclk(4) δdrift(1)]`.
///
/// Clock components are expressed in range units (meters and m/s) so the
/// normal equations stay well scaled.
pub const IDX_P: usize = 0;
pub const IDX_V: usize = 3;
pub const IDX_TH: usize = 6;
pub const IDX_BA: usize = 9;
pub const IDX_BG: usize = 12;
pub const IDX_CLK: usize = 15;
pub const IDX_DRIFT: usize = 19;
pub const INERTIAL_DIM: usize = 15;
pub const ERROR_DIM: usize = 20;

pub type ErrorVector = SVector<f64, ERROR_DIM>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Constellation {
    #[serde(rename = "G")]
    Gps,
    #[serde(rename = "R")]
    Glonass,
    #[serde(rename = "E")]
    Galileo,
    #[serde(rename = "C")]
    Beidou,
}

impl Constellation {
    pub const ALL: [Constellation; NUM_CONSTELLATIONS] = [
        Constellation::Gps,
        Constellation::Glonass,
        Constellation::Galileo,
        Constellation::Beidou,
    ];

    /// Slot of this constellation in the receiver clock vector.
    pub fn index(self) -> usize {
        match self {
            Constellation::Gps => 0,
            Constellation::Glonass => 1,
            Constellation::Galileo => 2,
            Constellation::Beidou => 3,
        }
    }

    pub fn tag(self) -> char {
        match self {
            Constellation::Gps => 'G',
            Constellation::Glonass => 'R',
            Constellation::Galileo => 'E',
            Constellation::Beidou => 'C',
        }
    }

    pub fn from_tag(c: char) -> Option<Self> {
        match c {
            'G' => Some(Constellation::Gps),
            'R' => Some(Constellation::Glonass),
            'E' => Some(Constellation::Galileo),
            'C' => Some(Constellation::Beidou),
            _ => None,
        }
    }
}

/// Satellite identifier such as `G05`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SatId {
    pub constellation: Constellation,
    pub prn: u16,
}

impl SatId {
    pub fn new(constellation: Constellation, prn: u16) -> Self {
        Self { constellation, prn }
    }
}

impl fmt::Display for SatId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:02}", self.constellation.tag(), self.prn)
    }
}

impl FromStr for SatId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        let c = chars
            .next()
            .and_then(Constellation::from_tag)
            .ok_or_else(|| format!("bad satellite id '{s}'"))?;
        let prn = chars
            .as_str()
            .parse::<u16>()
            .map_err(|_| format!("bad satellite id '{s}'"))?;
        Ok(SatId::new(c, prn))
    }
}

impl Serialize for SatId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SatId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One keyframe's navigation state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuState {
    /// Position of the body in the world frame (m).
    pub position: Vector3<f64>,
    /// Velocity in the world frame (m/s).
    pub velocity: Vector3<f64>,
    /// Body-to-world attitude.
    pub attitude: Rotation,
    /// Accelerometer bias (m/s²).
    pub accel_bias: Vector3<f64>,
    /// Gyroscope bias (rad/s).
    pub gyro_bias: Vector3<f64>,
    /// Receiver clock bias per constellation, G/R/E/C order (s).
    pub clock_bias: [f64; NUM_CONSTELLATIONS],
    /// Receiver clock drift (s/s).
    pub clock_drift: f64,
}

impl Default for ImuState {
    fn default() -> Self {
        Self {
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            attitude: Rotation::identity(),
            accel_bias: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            clock_bias: [0.0; NUM_CONSTELLATIONS],
            clock_drift: 0.0,
        }
    }
}

impl ImuState {
    pub fn is_finite(&self) -> bool {
        let v = |x: &Vector3<f64>| x.iter().all(|c| c.is_finite());
        v(&self.position)
            && v(&self.velocity)
            && v(&self.accel_bias)
            && v(&self.gyro_bias)
            && self.attitude.components().iter().all(|c| c.is_finite())
            && self.clock_bias.iter().all(|c| c.is_finite())
            && self.clock_drift.is_finite()
    }

    /// Applies an error-state increment; see [`manifold_plus`].
    pub fn plus(&self, delta: &ErrorVector) -> ImuState {
        let seg = |i: usize| Vector3::new(delta[i], delta[i + 1], delta[i + 2]);
        let mut clock_bias = self.clock_bias;
        for (c, slot) in clock_bias.iter_mut().enumerate() {
            *slot += delta[IDX_CLK + c] / SPEED_OF_LIGHT;
        }
        ImuState {
            position: self.position + seg(IDX_P),
            velocity: self.velocity + seg(IDX_V),
            attitude: self.attitude.compose(&Rotation::exp(&seg(IDX_TH))),
            accel_bias: self.accel_bias + seg(IDX_BA),
            gyro_bias: self.gyro_bias + seg(IDX_BG),
            clock_bias,
            clock_drift: self.clock_drift + delta[IDX_DRIFT] / SPEED_OF_LIGHT,
        }
    }

    /// Error-state difference `self ⊟ base`, the inverse of [`ImuState::plus`].
    pub fn minus(&self, base: &ImuState) -> ErrorVector {
        let mut d = ErrorVector::zeros();
        d.fixed_rows_mut::<3>(IDX_P).copy_from(&(self.position - base.position));
        d.fixed_rows_mut::<3>(IDX_V).copy_from(&(self.velocity - base.velocity));
        d.fixed_rows_mut::<3>(IDX_TH)
            .copy_from(&base.attitude.inverse().compose(&self.attitude).log());
        d.fixed_rows_mut::<3>(IDX_BA).copy_from(&(self.accel_bias - base.accel_bias));
        d.fixed_rows_mut::<3>(IDX_BG).copy_from(&(self.gyro_bias - base.gyro_bias));
        for c in 0..NUM_CONSTELLATIONS {
            d[IDX_CLK + c] = (self.clock_bias[c] - base.clock_bias[c]) * SPEED_OF_LIGHT;
        }
        d[IDX_DRIFT] = (self.clock_drift - base.clock_drift) * SPEED_OF_LIGHT;
        d
    }

    /// Receiver clock bias of one constellation in range units (m).
    pub fn clock_range(&self, c: Constellation) -> f64 {
        self.clock_bias[c.index()] * SPEED_OF_LIGHT
    }
}

/// Applies an error-state increment given as a slice. Position, velocity,
/// biases and clock terms are updated additively; the attitude is updated by
/// right-multiplying the exponential of the rotation increment.
pub fn manifold_plus(state: &ImuState, delta: &[f64]) -> Result<ImuState, GeomError> {
    if delta.len() != ERROR_DIM {
        return Err(GeomError::DimensionMismatch {
            expected: ERROR_DIM,
            got: delta.len(),
        });
    }
    Ok(state.plus(&ErrorVector::from_column_slice(delta)))
}
