//! Context-free ISA definitions: opcode decoding, immediate sign extension,
//! global port packing and route classification.
//!
//! Everything in here is a pure function of its inputs; the execution state
//! lives in [`crate::thread`] and [`crate::processor`].

/// Machine word. All memory cells, stack slots and channel payloads are
/// 32-bit unsigned words; signed operations reinterpret as two's complement
/// and every arithmetic result wraps modulo 2^32.
pub type Word = u32;

/// Processing units per processor.
pub const UNITS_PER_PROCESSOR: usize = 4;
/// Hardware threads per processing unit.
pub const THREADS_PER_UNIT: usize = 8;
/// Words of local memory per processing unit.
pub const MEMORY_WORDS: usize = 16384;
/// Channel ports per thread.
pub const PORTS_PER_THREAD: usize = 32;
/// External link channels per processor.
pub const EXTERNAL_LINKS: usize = 4;
/// Peripheral transmission interfaces per processor.
pub const PERIPHERAL_LINES: usize = 8;
/// Opcodes per word.
pub const OPCODES_PER_WORD: u16 = 4;
/// First word of the boot ROM region.
pub const BOOT_ROM_BASE: u32 = 0x3FC0;
/// Words occupied by the boot ROM region (up to the end of local memory).
pub const BOOT_ROM_WORDS: usize = MEMORY_WORDS - BOOT_ROM_BASE as usize;

macro_rules! operations {
    ($( $variant:ident = $byte:literal, $mnemonic:literal, $pops:literal, $pushes:literal; )+) => {
        /// The named operations, opcode bytes `0x80..=0xB7`.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        #[repr(u8)]
        pub enum Op {
            $( $variant = $byte, )+
        }

        impl Op {
            /// All operations in opcode order.
            pub const ALL: [Op; 56] = [ $( Op::$variant, )+ ];

            pub fn from_byte(byte: u8) -> Option<Op> {
                match byte {
                    $( $byte => Some(Op::$variant), )+
                    _ => None,
                }
            }

            pub fn byte(self) -> u8 {
                self as u8
            }

            pub fn mnemonic(self) -> &'static str {
                match self {
                    $( Op::$variant => $mnemonic, )+
                }
            }

            pub fn from_mnemonic(s: &str) -> Option<Op> {
                $( if s.eq_ignore_ascii_case($mnemonic) { return Some(Op::$variant); } )+
                None
            }

            /// Statically declared stack effect `(pops, pushes)`.
            ///
            /// POPN additionally moves the stack pointer by its popped
            /// operand; the table records only the fixed part.
            pub fn stack_effect(self) -> (u32, u32) {
                match self {
                    $( Op::$variant => ($pops, $pushes), )+
                }
            }
        }
    };
}

operations! {
    Nop      = 0x80, "NOP",      0, 0;
    Add      = 0x81, "ADD",      2, 1;
    Sub      = 0x82, "SUB",      2, 1;
    Mul      = 0x83, "MUL",      2, 1;
    Udiv     = 0x84, "UDIV",     2, 2;
    Sdiv     = 0x85, "SDIV",     2, 2;
    And      = 0x86, "AND",      2, 1;
    Or       = 0x87, "OR",       2, 1;
    Xor      = 0x88, "XOR",      2, 1;
    Pop      = 0x89, "POP",      1, 0;
    Dup      = 0x8A, "DUP",      1, 2;
    Exch     = 0x8B, "EXCH",     2, 2;
    Ldx      = 0x8C, "LDX",      1, 1;
    Swap     = 0x8D, "SWAP",     2, 1;
    Decld    = 0x8E, "DECLD",    1, 1;
    Log2     = 0x8F, "LOG2",     1, 1;
    Left     = 0x90, "LEFT",     3, 1;
    Right    = 0x91, "RIGHT",    3, 1;
    Sign     = 0x92, "SIGN",     1, 1;
    Zero     = 0x93, "ZERO",     1, 1;
    Ujp      = 0x94, "UJP",      1, 0;
    Fjp      = 0x95, "FJP",      2, 0;
    Ldc      = 0x96, "LDC",      1, 1;
    Ld       = 0x97, "LD",       1, 1;
    St       = 0x98, "ST",       2, 0;
    Count    = 0x99, "COUNT",    1, 1;
    Stop     = 0x9A, "STOP",     0, 0;
    Break    = 0x9B, "BREAK",    0, 0;
    Start    = 0x9C, "START",    6, 1;
    Call     = 0x9D, "CALL",     1, 1;
    Jump     = 0x9E, "JUMP",     1, 0;
    Stx      = 0x9F, "STX",      2, 0;
    Ldinc    = 0xA0, "LDINC",    1, 1;
    Getport  = 0xA1, "GETPORT",  1, 1;
    Setport  = 0xA2, "SETPORT",  2, 0;
    Out      = 0xA3, "OUT",      2, 0;
    Outend   = 0xA4, "OUTEND",   1, 0;
    Outpause = 0xA5, "OUTPAUSE", 1, 0;
    In       = 0xA6, "IN",       1, 1;
    Inmore   = 0xA7, "INMORE",   1, 1;
    Evclear  = 0xA8, "EVCLEAR",  0, 0;
    Evout    = 0xA9, "EVOUT",    2, 0;
    Evin     = 0xAA, "EVIN",     2, 0;
    Evend    = 0xAB, "EVEND",    2, 0;
    Wait     = 0xAC, "WAIT",     0, 0;
    Now      = 0xAD, "NOW",      0, 1;
    Waittmo  = 0xAE, "WAITTMO",  1, 0;
    Popn     = 0xAF, "POPN",     1, 0;
    Uless    = 0xB0, "ULESS",    2, 1;
    Sless    = 0xB1, "SLESS",    2, 1;
    Combine  = 0xB2, "COMBINE",  2, 1;
    Port     = 0xB3, "PORT",     1, 1;
    Ldax     = 0xB4, "LDAX",     1, 1;
    Threads  = 0xB5, "THREADS",  0, 1;
    Thrcyc   = 0xB6, "THRCYC",   0, 1;
    Cycles   = 0xB7, "CYCLES",   0, 1;
}

/// One decoded opcode byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Opcode {
    /// `0x00..=0x7F` and `0xC0..=0xFF`: the byte is its own sign-extended
    /// constant.
    Immediate(u8),
    /// `0x80..=0xB7`: a named operation.
    Operation(Op),
    /// `0xB8..=0xBF`: executing one of these faults the thread.
    Illegal(u8),
}

impl Opcode {
    pub fn byte(self) -> u8 {
        match self {
            Opcode::Immediate(b) | Opcode::Illegal(b) => b,
            Opcode::Operation(op) => op.byte(),
        }
    }
}

/// Extract and classify the opcode in `slot` (0..4) of `word`.
/// Slot 0 is the least significant byte; it executes first.
pub fn decode(word: Word, slot: u16) -> Opcode {
    debug_assert!(slot < 4);
    classify((word >> (8 * slot)) as u8)
}

/// Classify a raw opcode byte.
pub fn classify(byte: u8) -> Opcode {
    match byte {
        0x80..=0xB7 => Opcode::Operation(Op::from_byte(byte).unwrap()),
        0xB8..=0xBF => Opcode::Illegal(byte),
        _ => Opcode::Immediate(byte),
    }
}

/// The word pushed by an immediate opcode: the byte, sign extended.
pub fn imm_value(byte: u8) -> Word {
    byte as i8 as i32 as Word
}

/// A 32-bit global channel port number.
///
/// Layout: bits 31..10 carry the processor id or routing command, bits 9..8
/// the processing unit, bits 7..5 the thread, bits 4..0 the local port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct GlobalPort(pub Word);

impl GlobalPort {
    pub fn pack(processor_id: u32, unit: u8, thread: u8, port: u8) -> GlobalPort {
        debug_assert!(processor_id < (1 << 22));
        debug_assert!(unit < 4 && thread < 8 && port < 32);
        GlobalPort(
            (processor_id << 10)
                | ((unit as u32) << 8)
                | ((thread as u32) << 5)
                | (port as u32),
        )
    }

    /// Processor id or routing command: bits 31..10.
    pub fn command(self) -> u32 {
        self.0 >> 10
    }

    pub fn unit(self) -> u8 {
        ((self.0 >> 8) & 0x3) as u8
    }

    pub fn thread(self) -> u8 {
        ((self.0 >> 5) & 0x7) as u8
    }

    pub fn port(self) -> u8 {
        (self.0 & 0x1F) as u8
    }

    /// The same port fields re-addressed as a plain local destination
    /// (routing command 0). Used when a message crosses an external link
    /// that was selected explicitly by command.
    pub fn as_local(self) -> GlobalPort {
        GlobalPort(self.0 & 0x3FF)
    }
}

/// Where a global port number routes from the viewpoint of one switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteTarget {
    /// Command 0: a port on this processor.
    LocalUnit,
    /// Command 1: one of the peripheral lines.
    PeripheralLine,
    /// Command 2: the router configuration block.
    RouterConfig,
    /// Commands 4..=7: external link 0..=3.
    ExternalLink(u8),
    /// Command >= 8: a processor id, resolved via the routing table.
    Table(u32),
}

/// Classify the routing command of a global port number.
/// Command 3 is unassigned and yields `None`; transmitting into it is an
/// illegal route.
pub fn classify_route(p: GlobalPort) -> Option<RouteTarget> {
    match p.command() {
        0 => Some(RouteTarget::LocalUnit),
        1 => Some(RouteTarget::PeripheralLine),
        2 => Some(RouteTarget::RouterConfig),
        3 => None,
        n @ 4..=7 => Some(RouteTarget::ExternalLink((n - 4) as u8)),
        id => Some(RouteTarget::Table(id)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decode_extracts_bytes_in_little_endian_slot_order() {
        // Oracle: byte extraction via the standard little-endian view.
        let w: Word = 0x9A81_057F;
        let bytes = w.to_le_bytes();
        for slot in 0..4u16 {
            assert_eq!(decode(w, slot).byte(), bytes[slot as usize]);
        }
        assert_eq!(decode(w, 0), Opcode::Immediate(0x7F));
        assert_eq!(decode(w, 2), Opcode::Operation(Op::Add));
        assert_eq!(decode(0x0000_00B8, 0), Opcode::Illegal(0xB8));
    }

    #[test]
    fn opcode_classification_covers_all_bytes() {
        let mut immediates = 0;
        for b in 0u16..=255 {
            let b = b as u8;
            let oc = classify(b);
            assert_eq!(oc.byte(), b);
            match oc {
                Opcode::Immediate(_) => {
                    assert!(b < 0x80 || b >= 0xC0);
                    immediates += 1;
                }
                Opcode::Operation(op) => {
                    assert_eq!(op.byte(), b);
                    assert!((0x80..=0xB7).contains(&b));
                }
                Opcode::Illegal(_) => assert!((0xB8..=0xBF).contains(&b)),
            }
        }
        assert_eq!(immediates, 192);
    }

    #[test]
    fn immediates_cover_minus_64_through_127_once_each() {
        let mut seen = std::collections::BTreeSet::new();
        for b in 0u16..=255 {
            if let Opcode::Immediate(byte) = classify(b as u8) {
                // Oracle: sign extension through the i8 cast.
                assert_eq!(imm_value(byte), byte as i8 as i32 as u32);
                seen.insert(imm_value(byte) as i32);
            }
        }
        assert_eq!(seen.len(), 192);
        assert_eq!(*seen.first().unwrap(), -64);
        assert_eq!(*seen.last().unwrap(), 127);
    }

    #[test]
    fn imm_value_examples() {
        assert_eq!(imm_value(0x7F), 127);
        assert_eq!(imm_value(0xFF), 0xFFFF_FFFF);
        assert_eq!(imm_value(0xC0), 0xFFFF_FFC0);
    }

    #[test]
    fn mnemonic_round_trip() {
        for op in Op::ALL {
            assert_eq!(Op::from_mnemonic(op.mnemonic()), Some(op));
            assert_eq!(Op::from_byte(op.byte()), Some(op));
        }
        assert_eq!(Op::from_mnemonic("add"), Some(Op::Add));
        assert_eq!(Op::from_mnemonic("bogus"), None);
    }

    #[test]
    fn pack_port_examples() {
        // Oracle: independent shift-or packing.
        let pack_oracle = |id: u32, u: u32, t: u32, p: u32| (id << 10) | (u << 8) | (t << 5) | p;
        assert_eq!(GlobalPort::pack(0, 0, 0, 0).0, 0);
        assert_eq!(GlobalPort::pack(8, 1, 2, 3).0, 0x2143);
        assert_eq!(GlobalPort::pack(0, 2, 3, 5).0, 0x265);
        assert_eq!(GlobalPort::pack(8, 1, 2, 3).0, pack_oracle(8, 1, 2, 3));
        assert_eq!(GlobalPort::pack(8, 2, 5, 0).0, 0x22A0);
    }

    #[test]
    fn route_classification() {
        assert_eq!(
            classify_route(GlobalPort::pack(0, 1, 2, 3)),
            Some(RouteTarget::LocalUnit)
        );
        assert_eq!(
            classify_route(GlobalPort(1 << 10)),
            Some(RouteTarget::PeripheralLine)
        );
        assert_eq!(
            classify_route(GlobalPort(2 << 10)),
            Some(RouteTarget::RouterConfig)
        );
        assert_eq!(classify_route(GlobalPort(3 << 10)), None);
        assert_eq!(
            classify_route(GlobalPort(5 << 10)),
            Some(RouteTarget::ExternalLink(1))
        );
        assert_eq!(
            classify_route(GlobalPort(9 << 10)),
            Some(RouteTarget::Table(9))
        );
    }

    proptest! {
        #[test]
        fn classify_byte_round_trips(b: u8) {
            prop_assert_eq!(classify(b).byte(), b);
        }

        #[test]
        fn pack_unpack_round_trips(id in 0u32..(1 << 22), unit in 0u8..4, thread in 0u8..8, port in 0u8..32) {
            let p = GlobalPort::pack(id, unit, thread, port);
            prop_assert_eq!(p.command(), id);
            prop_assert_eq!(p.unit(), unit);
            prop_assert_eq!(p.thread(), thread);
            prop_assert_eq!(p.port(), port);
            let rebuilt = GlobalPort::pack(p.command(), p.unit(), p.thread(), p.port());
            prop_assert_eq!(rebuilt, p);
        }
    }

    #[test]
    fn pack_unpack_exhaustive_on_small_fields() {
        for unit in 0..4u8 {
            for thread in 0..8u8 {
                for port in 0..32u8 {
                    let p = GlobalPort::pack(0x3FFFFF, unit, thread, port);
                    assert_eq!((p.unit(), p.thread(), p.port()), (unit, thread, port));
                }
            }
        }
    }
}
