use std::io::Cursor;

use num_complex::Complex64;

use cvqkd::orchestrator::{read_trace, write_trace};
use cvqkd::trace::{read_cvqt, write_cvqt, Role, WaveformTrace};
use cvqkd::{Error, TraceFormatError};

fn samples(n: usize) -> Vec<Complex64> {
    (0..n).map(|k| Complex64::new(k as f64 * 0.25, -(k as f64) * 0.5)).collect()
}

#[test]
fn file_round_trip_is_exact_for_f32_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.cvqt");
    let t = WaveformTrace::new(samples(1000), 80e9, Role::Electronic, "test").unwrap();
    write_trace(&path, &t).unwrap();
    let back = read_trace(&path).unwrap();
    assert_eq!(back.samples, t.samples);
    assert_eq!(back.sample_rate(), 80e9);
    assert_eq!(back.role(), Role::Electronic);
}

#[test]
fn empty_trace_round_trips() {
    let mut buf = Vec::new();
    write_cvqt(&mut buf, Role::Signal, 32e9, &[]).unwrap();
    let (role, rate, s) = read_cvqt(Cursor::new(&buf)).unwrap();
    assert_eq!((role, rate, s.len()), (Role::Signal, 32e9, 0));
}

#[test]
fn bad_magic_and_truncation_are_distinct_errors() {
    let mut buf = Vec::new();
    write_cvqt(&mut buf, Role::Vacuum, 80e9, &samples(4)).unwrap();

    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(read_cvqt(Cursor::new(&bad)), Err(Error::Trace(TraceFormatError::BadMagic(_)))));

    let short = &buf[..buf.len() - 3];
    assert!(matches!(
        read_cvqt(Cursor::new(short)),
        Err(Error::Trace(TraceFormatError::Truncated { .. }))
    ));

    let mut version = buf.clone();
    version[4] = 9;
    assert!(matches!(
        read_cvqt(Cursor::new(&version)),
        Err(Error::Trace(TraceFormatError::UnsupportedVersion(9)))
    ));
}

#[test]
fn missing_file_is_an_io_error() {
    let err = read_trace("/nonexistent/trace.cvqt").unwrap_err();
    assert_eq!(err.exit_code(), 3);
}
