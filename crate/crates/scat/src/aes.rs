//! Bit-exact AES-128 encryption with access to round intermediates.
//!
//! The cipher plays two roles: it is the device under attack (its round
//! activity drives the synthesized current waveforms) and it supplies the
//! attacker's hypothesis target, the first-round S-box output. Encryption
//! only; this is a simulator, not a constant-time library.

pub const BLOCK_LEN: usize = 16;
pub const ROUNDS: usize = 10;

/// FIPS-197 S-box.
pub const SBOX: [u8; 256] = [
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab, 0x76,
    0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0,
    0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2, 0xeb, 0x27, 0xb2, 0x75,
    0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84,
    0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8,
    0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5, 0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2,
    0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb,
    0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79,
    0xe7, 0xc8, 0x37, 0x6d, 0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a,
    0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e,
    0xe1, 0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb, 0x16,
];

const RCON: [u8; 10] = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1b, 0x36];

#[inline]
pub fn sbox(x: u8) -> u8 {
    SBOX[x as usize]
}

#[inline]
pub fn hamming_weight(x: u8) -> u8 {
    x.count_ones() as u8
}

/// Hamming weight of the first-round S-box output for a plaintext byte under a
/// key guess — the attacker's per-trace leakage hypothesis.
#[inline]
pub fn sbox_hypothesis(pt_byte: u8, key_guess: u8) -> u8 {
    hamming_weight(sbox(pt_byte ^ key_guess))
}

#[inline]
fn xtime(x: u8) -> u8 {
    (x << 1) ^ (((x >> 7) & 1) * 0x1b)
}

/// Per-encryption record of what the core switched, round by round.
///
/// `round_sbox[r]` holds the sixteen SubBytes outputs of round `r` (0-based);
/// `round_states[r]` snapshots the state register entering round `r`
/// (`round_states[0]` is the whitened plaintext, `round_states[10]` the
/// ciphertext), so register switching counts are Hamming distances between
/// successive snapshots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundActivity {
    pub round_sbox: [[u8; BLOCK_LEN]; ROUNDS],
    pub round_states: [[u8; BLOCK_LEN]; ROUNDS + 1],
}

impl RoundActivity {
    pub fn first_round_sbox(&self) -> &[u8; BLOCK_LEN] {
        &self.round_sbox[0]
    }

    /// Deeper intermediates live behind this accessor so alternative leakage
    /// models can be built without changing the recording.
    pub fn sbox_output(&self, round: usize, byte: usize) -> u8 {
        self.round_sbox[round][byte]
    }

    /// Total S-box output Hamming weight of one round.
    pub fn round_hamming_weight(&self, round: usize) -> u32 {
        self.round_sbox[round]
            .iter()
            .map(|&b| u32::from(hamming_weight(b)))
            .sum()
    }

    /// Bits flipped in the state register by round `round` (0-based).
    pub fn switching_count(&self, round: usize) -> u32 {
        self.round_states[round]
            .iter()
            .zip(&self.round_states[round + 1])
            .map(|(&a, &b)| (a ^ b).count_ones())
            .sum()
    }
}

/// Expanded AES-128 key. Building it once amortizes the schedule across the
/// many encryptions of a trace campaign.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Aes128 {
    round_keys: [[u8; BLOCK_LEN]; ROUNDS + 1],
}

impl Aes128 {
    pub fn new(key: &[u8; BLOCK_LEN]) -> Self {
        let mut rk = [[0u8; BLOCK_LEN]; ROUNDS + 1];
        rk[0] = *key;
        let mut words = [[0u8; 4]; 44];
        for (i, w) in words.iter_mut().take(4).enumerate() {
            w.copy_from_slice(&key[4 * i..4 * i + 4]);
        }
        for i in 4..44 {
            let mut t = words[i - 1];
            if i % 4 == 0 {
                t.rotate_left(1);
                for b in &mut t {
                    *b = sbox(*b);
                }
                t[0] ^= RCON[i / 4 - 1];
            }
            for j in 0..4 {
                words[i][j] = words[i - 4][j] ^ t[j];
            }
        }
        for (r, key) in rk.iter_mut().enumerate() {
            for c in 0..4 {
                key[4 * c..4 * c + 4].copy_from_slice(&words[4 * r + c]);
            }
        }
        Self { round_keys: rk }
    }

    pub fn round_keys(&self) -> &[[u8; BLOCK_LEN]; ROUNDS + 1] {
        &self.round_keys
    }

    /// Encrypt one block, recording all round intermediates.
    pub fn encrypt(&self, plaintext: &[u8; BLOCK_LEN]) -> ([u8; BLOCK_LEN], RoundActivity) {
        let mut state = *plaintext;
        add_round_key(&mut state, &self.round_keys[0]);

        let mut activity = RoundActivity {
            round_sbox: [[0; BLOCK_LEN]; ROUNDS],
            round_states: [[0; BLOCK_LEN]; ROUNDS + 1],
        };
        activity.round_states[0] = state;

        for round in 1..=ROUNDS {
            sub_bytes(&mut state);
            activity.round_sbox[round - 1] = state;
            shift_rows(&mut state);
            if round < ROUNDS {
                mix_columns(&mut state);
            }
            add_round_key(&mut state, &self.round_keys[round]);
            activity.round_states[round] = state;
        }
        (state, activity)
    }
}

/// One-shot encryption; schedules the key and returns ciphertext plus activity.
pub fn encrypt(
    key: &[u8; BLOCK_LEN],
    plaintext: &[u8; BLOCK_LEN],
) -> ([u8; BLOCK_LEN], RoundActivity) {
    Aes128::new(key).encrypt(plaintext)
}

fn add_round_key(state: &mut [u8; BLOCK_LEN], rk: &[u8; BLOCK_LEN]) {
    for (s, k) in state.iter_mut().zip(rk) {
        *s ^= k;
    }
}

fn sub_bytes(state: &mut [u8; BLOCK_LEN]) {
    for s in state.iter_mut() {
        *s = sbox(*s);
    }
}

// State is column-major: state[r + 4c]. Row r rotates left by r positions.
fn shift_rows(state: &mut [u8; BLOCK_LEN]) {
    let s = *state;
    for r in 1..4 {
        for c in 0..4 {
            state[r + 4 * c] = s[r + 4 * ((c + r) % 4)];
        }
    }
}

fn mix_columns(state: &mut [u8; BLOCK_LEN]) {
    for c in 0..4 {
        let col = [state[4 * c], state[4 * c + 1], state[4 * c + 2], state[4 * c + 3]];
        let t = col[0] ^ col[1] ^ col[2] ^ col[3];
        for r in 0..4 {
            state[r + 4 * c] = col[r] ^ t ^ xtime(col[r] ^ col[(r + 1) % 4]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Decryption exists purely as test scaffolding for the round-trip check.
    mod decrypt {
        use super::super::*;

        fn inv_sbox_table() -> [u8; 256] {
            let mut inv = [0u8; 256];
            for (i, &v) in SBOX.iter().enumerate() {
                inv[v as usize] = i as u8;
            }
            inv
        }

        fn inv_shift_rows(state: &mut [u8; BLOCK_LEN]) {
            let s = *state;
            for r in 1..4 {
                for c in 0..4 {
                    state[r + 4 * ((c + r) % 4)] = s[r + 4 * c];
                }
            }
        }

        fn gf_mul(mut a: u8, mut b: u8) -> u8 {
            let mut acc = 0u8;
            while b != 0 {
                if b & 1 != 0 {
                    acc ^= a;
                }
                a = xtime(a);
                b >>= 1;
            }
            acc
        }

        fn inv_mix_columns(state: &mut [u8; BLOCK_LEN]) {
            for c in 0..4 {
                let col = [state[4 * c], state[4 * c + 1], state[4 * c + 2], state[4 * c + 3]];
                for r in 0..4 {
                    state[r + 4 * c] = gf_mul(col[r], 0x0e)
                        ^ gf_mul(col[(r + 1) % 4], 0x0b)
                        ^ gf_mul(col[(r + 2) % 4], 0x0d)
                        ^ gf_mul(col[(r + 3) % 4], 0x09);
                }
            }
        }

        pub fn decrypt(key: &[u8; BLOCK_LEN], ct: &[u8; BLOCK_LEN]) -> [u8; BLOCK_LEN] {
            let aes = Aes128::new(key);
            let inv = inv_sbox_table();
            let mut state = *ct;
            for (s, k) in state.iter_mut().zip(&aes.round_keys[ROUNDS]) {
                *s ^= k;
            }
            for round in (1..=ROUNDS).rev() {
                inv_shift_rows(&mut state);
                for s in state.iter_mut() {
                    *s = inv[*s as usize];
                }
                for (s, k) in state.iter_mut().zip(&aes.round_keys[round - 1]) {
                    *s ^= k;
                }
                if round > 1 {
                    inv_mix_columns(&mut state);
                }
            }
            state
        }
    }

    /// Independent S-box construction: GF(2^8) inversion by exponentiation
    /// plus the affine transform, with no table lookups.
    fn sbox_oracle(x: u8) -> u8 {
        fn gf_mul(mut a: u8, mut b: u8) -> u8 {
            let mut acc = 0u8;
            while b != 0 {
                if b & 1 != 0 {
                    acc ^= a;
                }
                let hi = a & 0x80;
                a <<= 1;
                if hi != 0 {
                    a ^= 0x1b;
                }
                b >>= 1;
            }
            acc
        }
        // x^254 = x^-1 in GF(2^8) for x != 0; 0 maps to 0.
        let mut inv = 1u8;
        let mut base = x;
        let mut e = 254u32;
        while e > 0 {
            if e & 1 == 1 {
                inv = gf_mul(inv, base);
            }
            base = gf_mul(base, base);
            e >>= 1;
        }
        let mut out = 0u8;
        for i in 0..8 {
            let bit = ((inv >> i)
                ^ (inv >> ((i + 4) % 8))
                ^ (inv >> ((i + 5) % 8))
                ^ (inv >> ((i + 6) % 8))
                ^ (inv >> ((i + 7) % 8)))
                & 1;
            out |= bit << i;
        }
        out ^ 0x63
    }

    /// Lookup-free bit count.
    fn popcount_oracle(mut x: u8) -> u8 {
        let mut n = 0;
        while x != 0 {
            n += x & 1;
            x >>= 1;
        }
        n
    }

    fn hex16(s: &str) -> [u8; 16] {
        let mut out = [0u8; 16];
        for (i, b) in out.iter_mut().enumerate() {
            *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).unwrap();
        }
        out
    }

    #[test]
    fn fips_known_answer_appendix_c() {
        let key = hex16("000102030405060708090a0b0c0d0e0f");
        let pt = hex16("00112233445566778899aabbccddeeff");
        let (ct, _) = encrypt(&key, &pt);
        assert_eq!(ct, hex16("69c4e0d86a7b0430d8cdb78070b4c55a"));
    }

    #[test]
    fn fips_known_answer_appendix_b() {
        let key = hex16("2b7e151628aed2a6abf7158809cf4f3c");
        let pt = hex16("3243f6a8885a308d313198a2e0370734");
        let (ct, _) = encrypt(&key, &pt);
        assert_eq!(ct, hex16("3925841d02dc09fbdc118597196a0b32"));
    }

    #[test]
    fn encryption_is_deterministic() {
        let key = [0u8; 16];
        let pt = [0u8; 16];
        let (a, act_a) = encrypt(&key, &pt);
        let (b, act_b) = encrypt(&key, &pt);
        assert_eq!(a, b);
        assert_eq!(act_a, act_b);
    }

    #[test]
    fn round_keys_start_with_key() {
        let key = hex16("2b7e151628aed2a6abf7158809cf4f3c");
        let aes = Aes128::new(&key);
        assert_eq!(aes.round_keys()[0], key);
        // Last round key of the FIPS-197 key expansion example.
        assert_eq!(aes.round_keys()[10], hex16("d014f9a8c9ee2589e13f0cc8b6630ca6"));
    }

    #[test]
    fn first_round_sbox_matches_definition() {
        let key = hex16("000102030405060708090a0b0c0d0e0f");
        let pt = hex16("00112233445566778899aabbccddeeff");
        let (_, activity) = encrypt(&key, &pt);
        for b in 0..16 {
            assert_eq!(activity.first_round_sbox()[b], sbox(pt[b] ^ key[b]));
            assert_eq!(activity.sbox_output(0, b), sbox(pt[b] ^ key[b]));
        }
    }

    #[test]
    fn encrypt_then_decrypt_round_trips() {
        let mut rng = crate::seeds::rng(7);
        use rand::Rng;
        for _ in 0..32 {
            let key: [u8; 16] = rng.random();
            let pt: [u8; 16] = rng.random();
            let (ct, _) = encrypt(&key, &pt);
            assert_eq!(decrypt::decrypt(&key, &ct), pt);
        }
    }

    #[test]
    fn sbox_is_a_bijection_and_matches_field_construction() {
        let mut seen = [false; 256];
        for x in 0..=255u8 {
            let y = sbox(x);
            assert!(!seen[y as usize], "duplicate S-box output {y:#04x}");
            seen[y as usize] = true;
            assert_eq!(y, sbox_oracle(x), "S-box mismatch at {x:#04x}");
        }
    }

    #[test]
    fn hamming_weight_complement_sums_to_eight() {
        for x in 0..=255u8 {
            assert_eq!(hamming_weight(x) + hamming_weight(x ^ 0xff), 8);
        }
    }

    #[test]
    fn sbox_hypothesis_table_entries() {
        // sbox(0x00) = 0x63 -> hw 4; sbox(0x52) = 0x00 -> hw 0.
        assert_eq!(sbox_hypothesis(0x00, 0x00), 4);
        assert_eq!(sbox_hypothesis(0x52, 0x00), 0);
    }

    #[test]
    fn sbox_hypothesis_exhaustive_against_oracles() {
        for pt in 0..=255u8 {
            for guess in 0..=255u8 {
                let expect = popcount_oracle(sbox_oracle(pt ^ guess));
                assert_eq!(sbox_hypothesis(pt, guess), expect);
            }
        }
    }

    #[test]
    fn switching_counts_are_bounded() {
        let key = hex16("000102030405060708090a0b0c0d0e0f");
        let pt = hex16("00112233445566778899aabbccddeeff");
        let (_, activity) = encrypt(&key, &pt);
        for r in 0..ROUNDS {
            assert!(activity.switching_count(r) <= 128);
            assert!(activity.round_hamming_weight(r) <= 128);
        }
    }
}
