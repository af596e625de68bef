//! Per-thread stack machine: register file, instruction dispatch, event
//! table and fault signalling.
//!
//! A thread executes against three abstract interfaces supplied by the
//! owning processing unit: word memory, its 32 channel ports, and the unit
//! control surface used by START/THREADS/CYCLES. Blocking is cooperative —
//! an instruction that cannot complete returns [`StepResult::Blocked`]
//! without touching any state and is retried from scratch later.

use crate::isa::{self, decode, imm_value, GlobalPort, Op, Opcode, Word, BOOT_ROM_BASE, MEMORY_WORDS};
use crate::switch::Token;

/// Why a thread stopped. The numeric codes are part of the exception
/// message wire format and must not change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum FaultReason {
    ExplicitStop = 0,
    IllegalOpcode = 1,
    IpOutOfRange = 2,
    SpOutOfRange = 3,
    DivideByZero = 4,
    EndOnInput = 5,
    NoThreadAvailable = 6,
    IllegalRoute = 7,
}

impl FaultReason {
    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(code: u32) -> Option<FaultReason> {
        use FaultReason::*;
        Some(match code {
            0 => ExplicitStop,
            1 => IllegalOpcode,
            2 => IpOutOfRange,
            3 => SpOutOfRange,
            4 => DivideByZero,
            5 => EndOnInput,
            6 => NoThreadAvailable,
            7 => IllegalRoute,
            _ => return None,
        })
    }

    pub fn is_fault(self) -> bool {
        self != FaultReason::ExplicitStop
    }
}

impl std::fmt::Display for FaultReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FaultReason::ExplicitStop => "stop",
            FaultReason::IllegalOpcode => "illegal instruction",
            FaultReason::IpOutOfRange => "instruction pointer out of range",
            FaultReason::SpOutOfRange => "stack pointer out of range",
            FaultReason::DivideByZero => "division by zero",
            FaultReason::EndOnInput => "end token on input",
            FaultReason::NoThreadAvailable => "no thread available",
            FaultReason::IllegalRoute => "illegal route",
        };
        f.write_str(s)
    }
}

/// What a blocked thread is waiting for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockReason {
    /// A channel send could not be accepted by the switch.
    Send(u8),
    /// No token available on the given port.
    Recv(u8),
    /// WAIT with no event pending.
    Event,
    /// WAITTMO with no event pending and the deadline not yet reached.
    EventTimeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThreadState {
    #[default]
    Unstarted,
    Running,
    Blocked(BlockReason),
    /// BREAK hit in debug mode; resumed externally.
    Stalled,
    Stopped(FaultReason),
}

impl ThreadState {
    /// Whether the slot counts as in use for THREADS/START.
    pub fn in_use(self) -> bool {
        matches!(
            self,
            ThreadState::Running | ThreadState::Blocked(_) | ThreadState::Stalled
        )
    }

    pub fn is_schedulable(self) -> bool {
        matches!(self, ThreadState::Running | ThreadState::Blocked(_))
    }
}

/// Outcome of executing (or attempting) one instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepResult {
    Continue,
    Blocked(BlockReason),
    Stalled,
    Stopped(FaultReason),
}

/// Per-port event vectors. A vector is an absolute opcode-granular
/// instruction pointer loaded by WAIT/WAITTMO when the condition fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EventSlot {
    pub out: Option<u16>,
    pub input: Option<u16>,
    pub end: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventTable {
    pub slots: [EventSlot; isa::PORTS_PER_THREAD],
}

impl Default for EventTable {
    fn default() -> Self {
        EventTable {
            slots: [EventSlot::default(); isa::PORTS_PER_THREAD],
        }
    }
}

impl EventTable {
    pub fn clear(&mut self) {
        self.slots = [EventSlot::default(); isa::PORTS_PER_THREAD];
    }

    pub fn is_empty(&self) -> bool {
        self.slots
            .iter()
            .all(|s| s.out.is_none() && s.input.is_none() && s.end.is_none())
    }
}

/// Register file and run state of one hardware thread.
///
/// `ip` is opcode granular: word index `ip >> 2`, slot `ip & 3`. The code
/// and data limits are kept as full words; range checks bound every use,
/// so out-of-width values merely fault the thread on first use.
#[derive(Debug, Clone, Default)]
pub struct ThreadContext {
    pub ip: u16,
    pub sp: Word,
    pub lc0: Word,
    pub lc1: Word,
    pub ld0: Word,
    pub ld1: Word,
    pub exc: Word,
    pub state: ThreadState,
    pub cycles: u32,
    pub events: EventTable,
}

impl ThreadContext {
    /// Constants pointer, derived: lc0 + 64.
    pub fn cp(&self) -> Word {
        self.lc0.wrapping_add(64)
    }

    /// Data pointer, derived: ld0 + 64.
    pub fn dp(&self) -> Word {
        self.ld0.wrapping_add(64)
    }

    /// Initialise this slot for a fresh run.
    pub fn start(&mut self, init: ThreadStart) {
        *self = ThreadContext {
            ip: init.ip,
            sp: init.sp,
            lc0: init.lc0,
            lc1: init.lc1,
            ld0: init.ld0,
            ld1: init.ld1,
            exc: init.exc,
            state: ThreadState::Running,
            cycles: 0,
            events: EventTable::default(),
        };
    }

    fn ip_in_range(&self, ip: u16) -> bool {
        let ip = ip as u64;
        if ip >= (BOOT_ROM_BASE as u64) * 4 {
            return true;
        }
        ip >= (self.lc0 as u64) * 4 && ip < (self.lc1 as u64) * 4
    }

    fn sp_in_range(&self) -> bool {
        self.sp >= self.ld0 && self.sp <= self.ld1
    }
}

/// Initial register values for a newly started thread.
#[derive(Debug, Clone, Copy)]
pub struct ThreadStart {
    pub lc0: Word,
    pub lc1: Word,
    pub ip: u16,
    pub sp: Word,
    pub ld0: Word,
    pub ld1: Word,
    pub exc: Word,
}

/// Word-addressable memory as seen by one thread. Addresses are already
/// bounds checked against the thread limits by the interpreter; `write`
/// returns false for write-protected words (the boot ROM region).
pub trait MemoryBus {
    fn read(&mut self, addr: u32) -> Word;
    #[must_use]
    fn write(&mut self, addr: u32, value: Word) -> bool;
}

/// Result of offering a token to the switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendOutcome {
    Sent,
    /// Path or destination busy; retry later.
    Busy,
    /// The destination can never be resolved (illegal routing command or
    /// missing table entry); the sender faults.
    NoRoute,
}

/// The 32 channel ports of one thread.
pub trait ChannelIo {
    fn set_dest(&mut self, port: u8, dest: Word);
    fn dest(&self, port: u8) -> Word;
    fn try_send(&mut self, port: u8, tok: Token) -> SendOutcome;
    /// Head of the port's inbox without consuming it.
    fn peek(&self, port: u8) -> Option<Token>;
    fn consume(&mut self, port: u8) -> Option<Token>;
    /// Whether a token offered right now would be accepted (out event).
    fn can_send(&self, port: u8) -> bool;
}

/// Unit-level services reachable from instructions.
pub trait UnitControl {
    /// Thread slots available to START.
    fn free_threads(&self) -> u32;
    /// Sum of the instruction counters of all eight threads.
    fn unit_cycles(&self) -> u32;
    /// Claim a free slot and initialise it. Returns the slot number.
    fn start_thread(&mut self, init: ThreadStart) -> Option<u8>;
}

/// Everything outside the thread context that one step may touch.
pub struct StepEnv<'a> {
    pub mem: &'a mut dyn MemoryBus,
    pub chan: &'a mut dyn ChannelIo,
    pub unit: &'a mut dyn UnitControl,
    pub time: u32,
    pub debug: bool,
    pub processor_id: u32,
    pub unit_no: u8,
    pub thread_no: u8,
}

// Pure helpers for the bit field instructions. The test suites check these
// against independent oracles, so keep them free of interpreter state.

/// SWAP: for each set bit i of the 5-bit mask, exchange every bit k with
/// bit k xor 2^i.
pub fn swap_bits(w: Word, mask: u32) -> Word {
    const FIELD: [u32; 5] = [0x5555_5555, 0x3333_3333, 0x0F0F_0F0F, 0x00FF_00FF, 0x0000_FFFF];
    let mut b = w;
    for (i, field) in FIELD.iter().enumerate() {
        if mask & (1 << i) != 0 {
            let sh = 1 << i;
            b = ((b >> sh) & field) | ((b & field) << sh);
        }
    }
    b
}

/// LEFT: funnel shift. Shift `shifter` left by `count`, filling from
/// `rotator`; counts of 32 and above select the rotator itself.
pub fn funnel_left(shifter: Word, rotator: Word, count: Word) -> Word {
    let n = count & 31;
    let hi = if count < 32 { shifter } else { rotator };
    if n == 0 {
        hi
    } else {
        (hi << n) | (rotator >> (32 - n))
    }
}

/// RIGHT: mirror image of [`funnel_left`].
pub fn funnel_right(shifter: Word, rotator: Word, count: Word) -> Word {
    let n = count & 31;
    let lo = if count < 32 { shifter } else { rotator };
    if n == 0 {
        lo
    } else {
        (lo >> n) | (rotator << (32 - n))
    }
}

/// LOG2: index of the highest set bit, -1 for a zero word.
pub fn log2_word(w: Word) -> Word {
    if w == 0 {
        u32::MAX
    } else {
        31 - w.leading_zeros()
    }
}

/// Euclidean quotient and remainder: 0 <= r < |a|, truncated to words.
pub fn euclid_divmod(b: Word, a: Word) -> (Word, Word) {
    debug_assert!(a != 0);
    let (b, a) = (b as i32 as i64, a as i32 as i64);
    (b.div_euclid(a) as Word, b.rem_euclid(a) as Word)
}

const TRUE_WORD: Word = u32::MAX;
const FALSE_WORD: Word = 0;

fn bool_word(v: bool) -> Word {
    if v {
        TRUE_WORD
    } else {
        FALSE_WORD
    }
}

enum Done {
    Advance,
    /// ip already assigned by the instruction.
    Jump(u16),
    Blocked(BlockReason),
    Stalled,
    Stopped(FaultReason),
}

/// Execute one instruction. The caller is responsible for updating
/// `ctx.state` from the result and for emitting the exception message on
/// `Stopped`.
pub fn step(ctx: &mut ThreadContext, env: &mut StepEnv) -> StepResult {
    if !ctx.ip_in_range(ctx.ip) {
        return StepResult::Stopped(FaultReason::IpOutOfRange);
    }
    let word = env.mem.read((ctx.ip >> 2) as u32);
    let opcode = decode(word, ctx.ip & 3);

    match exec(ctx, env, opcode) {
        Err(fault) => StepResult::Stopped(fault),
        Ok(Done::Blocked(r)) => StepResult::Blocked(r),
        Ok(Done::Stopped(r)) => {
            ctx.cycles = ctx.cycles.wrapping_add(1);
            StepResult::Stopped(r)
        }
        Ok(done) => {
            ctx.ip = match done {
                Done::Jump(ip) => ip,
                _ => ctx.ip.wrapping_add(1),
            };
            ctx.cycles = ctx.cycles.wrapping_add(1);
            if !ctx.ip_in_range(ctx.ip) {
                StepResult::Stopped(FaultReason::IpOutOfRange)
            } else if !ctx.sp_in_range() {
                StepResult::Stopped(FaultReason::SpOutOfRange)
            } else if matches!(done, Done::Stalled) {
                StepResult::Stalled
            } else {
                StepResult::Continue
            }
        }
    }
}

fn exec(ctx: &mut ThreadContext, env: &mut StepEnv, opcode: Opcode) -> Result<Done, FaultReason> {
    let op = match opcode {
        Opcode::Immediate(byte) => {
            push(ctx, env, imm_value(byte))?;
            return Ok(Done::Advance);
        }
        Opcode::Illegal(_) => return Err(FaultReason::IllegalOpcode),
        Opcode::Operation(op) => op,
    };

    match op {
        Op::Nop => {}
        Op::Break => {
            if env.debug {
                return Ok(Done::Stalled);
            }
        }

        Op::Add => binary(ctx, env, |b, a| b.wrapping_add(a))?,
        Op::Sub => binary(ctx, env, |b, a| b.wrapping_sub(a))?,
        Op::Mul => binary(ctx, env, |b, a| b.wrapping_mul(a))?,
        Op::And => binary(ctx, env, |b, a| b & a)?,
        Op::Or => binary(ctx, env, |b, a| b | a)?,
        Op::Xor => binary(ctx, env, |b, a| b ^ a)?,
        Op::Uless => binary(ctx, env, |b, a| bool_word(b < a))?,
        Op::Sless => binary(ctx, env, |b, a| bool_word((b as i32) < (a as i32)))?,
        Op::Combine => binary(ctx, env, |b, a| b.wrapping_mul(192).wrapping_add(a))?,

        Op::Udiv => {
            let a = pop(ctx, env)?;
            if a == 0 {
                return Err(FaultReason::DivideByZero);
            }
            let b = pop(ctx, env)?;
            let q = b / a;
            push(ctx, env, q)?;
            push(ctx, env, b.wrapping_sub(q.wrapping_mul(a)))?;
        }
        Op::Sdiv => {
            let a = pop(ctx, env)?;
            if a == 0 {
                return Err(FaultReason::DivideByZero);
            }
            let b = pop(ctx, env)?;
            let (q, r) = euclid_divmod(b, a);
            push(ctx, env, q)?;
            push(ctx, env, r)?;
        }

        Op::Pop => ctx.sp = ctx.sp.wrapping_add(1),
        Op::Dup => {
            let a = stack_read(ctx, env, ctx.sp)?;
            push(ctx, env, a)?;
        }
        Op::Exch => {
            let a = pop(ctx, env)?;
            let b = pop(ctx, env)?;
            push(ctx, env, a)?;
            push(ctx, env, b)?;
        }
        Op::Ldx => {
            let a = pop(ctx, env)?;
            let b = stack_read(ctx, env, ctx.sp.wrapping_add(a))?;
            push(ctx, env, b)?;
        }
        Op::Stx => {
            let a = pop(ctx, env)?;
            let b = pop(ctx, env)?;
            stack_write(ctx, env, ctx.sp.wrapping_add(a), b)?;
        }
        Op::Ldax => {
            let a = pop(ctx, env)?;
            let v = a.wrapping_add(ctx.sp).wrapping_sub(ctx.dp());
            push(ctx, env, v)?;
        }
        Op::Popn => {
            let a = pop(ctx, env)?;
            ctx.sp = ctx.sp.wrapping_add(a);
        }

        Op::Swap => {
            let mask = pop(ctx, env)? & 0x1F;
            let b = pop(ctx, env)?;
            push(ctx, env, swap_bits(b, mask))?;
        }
        Op::Log2 => {
            let a = pop(ctx, env)?;
            push(ctx, env, log2_word(a))?;
        }
        Op::Count => {
            let a = pop(ctx, env)?;
            push(ctx, env, a.count_ones())?;
        }
        Op::Left => {
            let a = pop(ctx, env)?;
            let b = pop(ctx, env)?;
            let c = pop(ctx, env)?;
            push(ctx, env, funnel_left(c, b, a))?;
        }
        Op::Right => {
            let a = pop(ctx, env)?;
            let b = pop(ctx, env)?;
            let c = pop(ctx, env)?;
            push(ctx, env, funnel_right(c, b, a))?;
        }
        Op::Sign => {
            let a = pop(ctx, env)?;
            push(ctx, env, bool_word(a & 0x8000_0000 != 0))?;
        }
        Op::Zero => {
            let a = pop(ctx, env)?;
            push(ctx, env, bool_word(a == 0))?;
        }

        Op::Ujp => {
            let a = pop(ctx, env)?;
            return Ok(Done::Jump(offset_ip(ctx.ip, a)));
        }
        Op::Fjp => {
            let a = pop(ctx, env)?;
            let b = pop(ctx, env)?;
            if b == 0 {
                return Ok(Done::Jump(offset_ip(ctx.ip, a)));
            }
        }
        Op::Call => {
            let a = pop(ctx, env)?;
            let ret = (ctx.ip as Word)
                .wrapping_add(1)
                .wrapping_sub(ctx.lc0.wrapping_mul(4));
            push(ctx, env, ret)?;
            return Ok(Done::Jump(offset_ip(ctx.ip, a)));
        }
        Op::Jump => {
            let a = pop(ctx, env)?;
            return Ok(Done::Jump(a.wrapping_add(ctx.lc0.wrapping_mul(4)) as u16));
        }
        Op::Stop => return Ok(Done::Stopped(FaultReason::ExplicitStop)),

        Op::Ldc => {
            let a = pop(ctx, env)?;
            let target = a.wrapping_add(ctx.cp());
            let v = if target >= ctx.lc1 {
                let addr = a
                    .wrapping_sub(ctx.lc1.wrapping_sub(ctx.lc0))
                    .wrapping_add(ctx.dp());
                data_read(ctx, env, addr)?
            } else {
                code_read(ctx, env, target)?
            };
            push(ctx, env, v)?;
        }
        Op::Ld => {
            let a = pop(ctx, env)?;
            let v = data_read(ctx, env, a.wrapping_add(ctx.dp()))?;
            push(ctx, env, v)?;
        }
        Op::St => {
            let a = pop(ctx, env)?;
            let w = pop(ctx, env)?;
            data_write(ctx, env, a.wrapping_add(ctx.dp()), w)?;
        }
        Op::Ldinc => {
            let a = pop(ctx, env)?;
            let addr = a.wrapping_add(ctx.dp());
            let b = data_read(ctx, env, addr)?;
            push(ctx, env, b)?;
            data_write(ctx, env, addr, b.wrapping_add(1))?;
        }
        Op::Decld => {
            let a = pop(ctx, env)?;
            let addr = a.wrapping_add(ctx.dp());
            let b = data_read(ctx, env, addr)?.wrapping_sub(1);
            push(ctx, env, b)?;
            data_write(ctx, env, addr, b)?;
        }

        Op::Start => {
            if env.unit.free_threads() == 0 {
                return Err(FaultReason::NoThreadAvailable);
            }
            let exc = pop(ctx, env)?;
            let ld1 = pop(ctx, env)?;
            let ld0 = pop(ctx, env)?;
            let b = pop(ctx, env)?;
            let lc1 = pop(ctx, env)?;
            let lc0 = pop(ctx, env)?;
            let init = ThreadStart {
                lc0,
                lc1,
                ip: b.wrapping_add(lc0).wrapping_mul(4) as u16,
                sp: ld1,
                ld0,
                ld1,
                exc,
            };
            let thread = env
                .unit
                .start_thread(init)
                .ok_or(FaultReason::NoThreadAvailable)?;
            let port = GlobalPort::pack(env.processor_id, env.unit_no, thread, 0);
            push(ctx, env, port.0)?;
        }

        Op::Port => {
            let a = pop(ctx, env)? & 0x1F;
            let port = GlobalPort::pack(env.processor_id, env.unit_no, env.thread_no, a as u8);
            push(ctx, env, port.0)?;
        }
        Op::Now => push(ctx, env, env.time)?,
        Op::Threads => push(ctx, env, env.unit.free_threads())?,
        Op::Thrcyc => push(ctx, env, ctx.cycles)?,
        Op::Cycles => push(ctx, env, env.unit.unit_cycles())?,

        Op::Getport => {
            let a = pop(ctx, env)? & 0x1F;
            push(ctx, env, env.chan.dest(a as u8))?;
        }
        Op::Setport => {
            let a = pop(ctx, env)? & 0x1F;
            let b = pop(ctx, env)?;
            env.chan.set_dest(a as u8, b);
        }

        // The channel transfers read their operands without popping, so a
        // blocked attempt leaves the thread exactly as it was.
        Op::Out => {
            let a = (stack_read(ctx, env, ctx.sp)? & 0x1F) as u8;
            let b = stack_read(ctx, env, ctx.sp.wrapping_add(1))?;
            match env.chan.try_send(a, Token::Data(b)) {
                SendOutcome::Sent => ctx.sp = ctx.sp.wrapping_add(2),
                SendOutcome::Busy => return Ok(Done::Blocked(BlockReason::Send(a))),
                SendOutcome::NoRoute => return Err(FaultReason::IllegalRoute),
            }
        }
        Op::Outend | Op::Outpause => {
            let a = (stack_read(ctx, env, ctx.sp)? & 0x1F) as u8;
            let tok = if op == Op::Outend {
                Token::End
            } else {
                Token::Pause
            };
            match env.chan.try_send(a, tok) {
                SendOutcome::Sent => ctx.sp = ctx.sp.wrapping_add(1),
                SendOutcome::Busy => return Ok(Done::Blocked(BlockReason::Send(a))),
                SendOutcome::NoRoute => return Err(FaultReason::IllegalRoute),
            }
        }
        Op::In => {
            let a = (stack_read(ctx, env, ctx.sp)? & 0x1F) as u8;
            match env.chan.peek(a) {
                None => return Ok(Done::Blocked(BlockReason::Recv(a))),
                Some(Token::End) => {
                    env.chan.consume(a);
                    return Err(FaultReason::EndOnInput);
                }
                Some(Token::Data(w)) => {
                    env.chan.consume(a);
                    ctx.sp = ctx.sp.wrapping_add(1);
                    push(ctx, env, w)?;
                }
                Some(Token::Pause) => unreachable!("pause tokens are never delivered"),
            }
        }
        Op::Inmore => {
            let a = (stack_read(ctx, env, ctx.sp)? & 0x1F) as u8;
            match env.chan.peek(a) {
                None => return Ok(Done::Blocked(BlockReason::Recv(a))),
                Some(Token::End) => {
                    env.chan.consume(a);
                    ctx.sp = ctx.sp.wrapping_add(1);
                    push(ctx, env, FALSE_WORD)?;
                }
                Some(Token::Data(_)) => {
                    ctx.sp = ctx.sp.wrapping_add(1);
                    push(ctx, env, TRUE_WORD)?;
                }
                Some(Token::Pause) => unreachable!("pause tokens are never delivered"),
            }
        }

        Op::Evclear => ctx.events.clear(),
        Op::Evout => {
            let (port, vector) = event_args(ctx, env)?;
            ctx.events.slots[port].out = Some(vector);
        }
        Op::Evin => {
            let (port, vector) = event_args(ctx, env)?;
            ctx.events.slots[port].input = Some(vector);
            ctx.events.slots[port].end = Some(vector);
        }
        Op::Evend => {
            let (port, vector) = event_args(ctx, env)?;
            ctx.events.slots[port].end = Some(vector);
        }
        Op::Wait => match scan_events(ctx, env) {
            Some(vector) => return Ok(Done::Jump(vector)),
            None => return Ok(Done::Blocked(BlockReason::Event)),
        },
        Op::Waittmo => {
            let a = stack_read(ctx, env, ctx.sp)?;
            if env.time.wrapping_sub(a) as i32 >= 0 {
                ctx.sp = ctx.sp.wrapping_add(1);
            } else {
                match scan_events(ctx, env) {
                    Some(vector) => {
                        ctx.sp = ctx.sp.wrapping_add(1);
                        return Ok(Done::Jump(vector));
                    }
                    None => return Ok(Done::Blocked(BlockReason::EventTimeout)),
                }
            }
        }
    }
    Ok(Done::Advance)
}

fn binary(
    ctx: &mut ThreadContext,
    env: &mut StepEnv,
    f: impl FnOnce(Word, Word) -> Word,
) -> Result<(), FaultReason> {
    let a = pop(ctx, env)?;
    let b = pop(ctx, env)?;
    push(ctx, env, f(b, a))
}

fn event_args(ctx: &mut ThreadContext, env: &mut StepEnv) -> Result<(usize, u16), FaultReason> {
    let a = pop(ctx, env)? & 0x1F;
    let b = pop(ctx, env)?;
    Ok((a as usize, offset_ip(ctx.ip, b)))
}

/// Event scan order: ports ascending, per port output before end before
/// input; the first match wins.
fn scan_events(ctx: &ThreadContext, env: &StepEnv) -> Option<u16> {
    for (port, slot) in ctx.events.slots.iter().enumerate() {
        if let Some(v) = slot.out {
            if env.chan.can_send(port as u8) {
                return Some(v);
            }
        }
        match env.chan.peek(port as u8) {
            Some(Token::End) => {
                if let Some(v) = slot.end {
                    return Some(v);
                }
                if let Some(v) = slot.input {
                    return Some(v);
                }
            }
            Some(_) => {
                if let Some(v) = slot.input {
                    return Some(v);
                }
            }
            None => {}
        }
    }
    None
}

fn offset_ip(ip: u16, delta: Word) -> u16 {
    (ip as Word).wrapping_add(delta) as u16
}

fn in_data_range(ctx: &ThreadContext, addr: Word) -> bool {
    addr >= ctx.ld0 && addr < ctx.ld1 && addr < MEMORY_WORDS as Word
}

fn in_code_range(ctx: &ThreadContext, addr: Word) -> bool {
    addr >= ctx.lc0 && addr < ctx.lc1 && addr < MEMORY_WORDS as Word
}

fn stack_read(ctx: &ThreadContext, env: &mut StepEnv, addr: Word) -> Result<Word, FaultReason> {
    if in_data_range(ctx, addr) {
        Ok(env.mem.read(addr))
    } else {
        Err(FaultReason::SpOutOfRange)
    }
}

fn stack_write(
    ctx: &ThreadContext,
    env: &mut StepEnv,
    addr: Word,
    value: Word,
) -> Result<(), FaultReason> {
    if in_data_range(ctx, addr) && env.mem.write(addr, value) {
        Ok(())
    } else {
        Err(FaultReason::SpOutOfRange)
    }
}

fn data_read(ctx: &ThreadContext, env: &mut StepEnv, addr: Word) -> Result<Word, FaultReason> {
    stack_read(ctx, env, addr)
}

fn data_write(
    ctx: &ThreadContext,
    env: &mut StepEnv,
    addr: Word,
    value: Word,
) -> Result<(), FaultReason> {
    stack_write(ctx, env, addr, value)
}

fn code_read(ctx: &ThreadContext, env: &mut StepEnv, addr: Word) -> Result<Word, FaultReason> {
    if in_code_range(ctx, addr) {
        Ok(env.mem.read(addr))
    } else {
        Err(FaultReason::SpOutOfRange)
    }
}

fn pop(ctx: &mut ThreadContext, env: &mut StepEnv) -> Result<Word, FaultReason> {
    let w = stack_read(ctx, env, ctx.sp)?;
    ctx.sp = ctx.sp.wrapping_add(1);
    Ok(w)
}

fn push(ctx: &mut ThreadContext, env: &mut StepEnv, value: Word) -> Result<(), FaultReason> {
    let addr = ctx.sp.wrapping_sub(1);
    stack_write(ctx, env, addr, value)?;
    ctx.sp = addr;
    Ok(())
}
