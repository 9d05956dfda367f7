/// Rounds an `f32` to the nearest bfloat16 value (8 exponent bits, 7 stored
/// mantissa bits) with ties to even, returned as an `f32`.
///
/// Infinities pass through, NaN stays NaN (quieted, sign kept), overflow past
/// the largest finite bf16 rounds to infinity and subnormals round like any
/// other value.
pub fn bf16_round(x: f32) -> f32 {
    let bits = x.to_bits();
    if x.is_nan() {
        return f32::from_bits((bits | 0x0040_0000) & 0xFFFF_0000);
    }
    let lsb = (bits >> 16) & 1;
    let rounded = bits.wrapping_add(0x7FFF + lsb) & 0xFFFF_0000;
    f32::from_bits(rounded)
}
