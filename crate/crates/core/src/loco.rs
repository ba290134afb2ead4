//! LOCO addressing: a vehicle's mobility-derived identity.
//!
//! A LOCO address is the triple (road ID, lane direction, physical location).
//! Road IDs are fixed-width bit strings so that two addresses can be compared
//! with a Hamming distance; the physical location stays numeric and is
//! compared against the maximum allowed clustering distance separately.

use std::fmt;

use thiserror::Error;

/// Default road ID width in bits.
pub const DEFAULT_ROAD_BITS: u8 = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocoError {
    #[error("address format: expected a {expected}-bit road id, got {actual} bits")]
    WidthMismatch { expected: u8, actual: u8 },
    #[error("bit strings of different length cannot be compared ({left} vs {right} bits)")]
    LengthMismatch { left: u8, right: u8 },
    #[error("position {position_m} m is outside road extent [0, {road_length_m}] m")]
    OutOfRange { position_m: f64, road_length_m: f64 },
    #[error("invalid bit string width {0} (must be 1..=64)")]
    InvalidWidth(u8),
    #[error("value {value:#b} does not fit in {width} bits")]
    ValueTooWide { value: u64, width: u8 },
}

/// A fixed-width bit string of up to 64 bits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitString {
    bits: u64,
    width: u8,
}

impl BitString {
    pub fn new(bits: u64, width: u8) -> Result<Self, LocoError> {
        if width == 0 || width > 64 {
            return Err(LocoError::InvalidWidth(width));
        }
        if width < 64 && bits >> width != 0 {
            return Err(LocoError::ValueTooWide { value: bits, width });
        }
        Ok(Self { bits, width })
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn width(&self) -> u8 {
        self.width
    }

    /// Bit at position `i`, counted from the least significant end.
    pub fn bit(&self, i: u8) -> bool {
        i < self.width && (self.bits >> i) & 1 == 1
    }

    /// Appends `other` to the right (least significant side) of `self`.
    pub fn concat(&self, other: &BitString) -> Result<BitString, LocoError> {
        let width = self.width as u16 + other.width as u16;
        if width > 64 {
            return Err(LocoError::InvalidWidth(width.min(255) as u8));
        }
        let shifted = if other.width == 64 { 0 } else { self.bits << other.width };
        BitString::new(shifted | other.bits, width as u8)
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0b{:0width$b}", self.bits, width = self.width as usize)
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:0width$b}", self.bits, width = self.width as usize)
    }
}

/// Travel direction along a road axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LaneDirection {
    /// Bit 0: left-to-right, increasing coordinate.
    Increasing,
    /// Bit 1: right-to-left, decreasing coordinate.
    Decreasing,
}

impl LaneDirection {
    pub fn bit(self) -> u64 {
        match self {
            LaneDirection::Increasing => 0,
            LaneDirection::Decreasing => 1,
        }
    }

    pub fn from_bit(bit: u64) -> Option<Self> {
        match bit {
            0 => Some(LaneDirection::Increasing),
            1 => Some(LaneDirection::Decreasing),
            _ => None,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            LaneDirection::Increasing => LaneDirection::Decreasing,
            LaneDirection::Decreasing => LaneDirection::Increasing,
        }
    }

    /// +1.0 for increasing lanes, -1.0 for decreasing ones.
    pub fn sign(self) -> f64 {
        match self {
            LaneDirection::Increasing => 1.0,
            LaneDirection::Decreasing => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LocoAddress {
    pub road_id: BitString,
    pub lane_direction: LaneDirection,
    /// Whole meters along the road axis.
    pub physical_location: u32,
}

impl LocoAddress {
    /// The `road_id ‖ lane_direction` bit string compared by the clustering rule.
    pub fn road_lane_bits(&self) -> Result<BitString, LocoError> {
        let lane = BitString::new(self.lane_direction.bit(), 1)?;
        self.road_id.concat(&lane)
    }
}

impl fmt::Display for LocoAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}|{}|{}",
            self.road_id,
            self.lane_direction.bit(),
            self.physical_location
        )
    }
}

/// Encoder bound to a fixed road ID width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocoFormat {
    road_bits: u8,
}

impl Default for LocoFormat {
    fn default() -> Self {
        Self { road_bits: DEFAULT_ROAD_BITS }
    }
}

impl LocoFormat {
    pub fn new(road_bits: u8) -> Result<Self, LocoError> {
        // One bit is reserved for the lane when concatenating.
        if road_bits == 0 || road_bits > 63 {
            return Err(LocoError::InvalidWidth(road_bits));
        }
        Ok(Self { road_bits })
    }

    pub fn road_bits(&self) -> u8 {
        self.road_bits
    }

    /// Builds a road ID of the configured width from its integer value.
    pub fn road_id(&self, value: u64) -> Result<BitString, LocoError> {
        BitString::new(value, self.road_bits)
    }

    pub fn encode(
        &self,
        road_id: BitString,
        lane_direction: LaneDirection,
        position_m: f64,
        road_length_m: f64,
    ) -> Result<LocoAddress, LocoError> {
        if road_id.width() != self.road_bits {
            return Err(LocoError::WidthMismatch {
                expected: self.road_bits,
                actual: road_id.width(),
            });
        }
        if !(position_m >= 0.0 && position_m <= road_length_m) {
            return Err(LocoError::OutOfRange { position_m, road_length_m });
        }
        Ok(LocoAddress {
            road_id,
            lane_direction,
            physical_location: position_m.floor() as u32,
        })
    }

    /// Re-encodes a vehicle's address after it moved. Either every field is
    /// replaced or, on error, the caller keeps `current` as it was.
    pub fn update(
        &self,
        current: &LocoAddress,
        new_road: BitString,
        new_lane: LaneDirection,
        new_position_m: f64,
        road_length_m: f64,
    ) -> Result<LocoAddress, LocoError> {
        let _ = current;
        self.encode(new_road, new_lane, new_position_m, road_length_m)
    }
}

/// Number of differing bit positions between two equal-width bit strings.
pub fn hamming_distance(a: &BitString, b: &BitString) -> Result<u32, LocoError> {
    if a.width() != b.width() {
        return Err(LocoError::LengthMismatch { left: a.width(), right: b.width() });
    }
    Ok((a.bits() ^ b.bits()).count_ones())
}

/// Mobility similarity of two addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MobilityDistance {
    /// Hamming distance over `road_id ‖ lane_direction`.
    pub hd: u32,
    /// |PL.a - PL.b| in meters.
    pub pl_delta: u32,
}

pub fn mobility_distance(a: &LocoAddress, b: &LocoAddress) -> Result<MobilityDistance, LocoError> {
    let hd = hamming_distance(&a.road_lane_bits()?, &b.road_lane_bits()?)?;
    Ok(MobilityDistance {
        hd,
        pl_delta: a.physical_location.abs_diff(b.physical_location),
    })
}
