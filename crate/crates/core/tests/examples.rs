mod generate_signals {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/generate_signals.rs"));
}

#[test]
fn generate_signals_runs() {
    generate_signals::run_example().expect("generate_signals example should run");
}

mod detect_r_peaks {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/detect_r_peaks.rs"));
}

#[test]
fn detect_r_peaks_runs() {
    detect_r_peaks::run_example().expect("detect_r_peaks example should run");
}

mod posture_alerts {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/posture_alerts.rs"));
}

#[test]
fn posture_alerts_runs() {
    posture_alerts::run_example().expect("posture_alerts example should run");
}

mod message_bus {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/message_bus.rs"));
}

#[test]
fn message_bus_runs() {
    message_bus::run_example().expect("message_bus example should run");
}

mod dispatcher_cleanse {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/dispatcher_cleanse.rs"));
}

#[test]
fn dispatcher_cleanse_runs() {
    dispatcher_cleanse::run_example().expect("dispatcher_cleanse example should run");
}

mod microbatch_windows {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/microbatch_windows.rs"));
}

#[test]
fn microbatch_windows_runs() {
    microbatch_windows::run_example().expect("microbatch_windows example should run");
}

mod store_recovery {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/store_recovery.rs"));
}

#[test]
fn store_recovery_runs() {
    store_recovery::run_example().expect("store_recovery example should run");
}

mod end_to_end {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/end_to_end.rs"));
}

#[test]
fn end_to_end_runs() {
    end_to_end::run_example().expect("end_to_end example should run");
}

mod tcp_bus_smoke {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/tcp_bus_smoke.rs"));
}

#[test]
fn tcp_bus_smoke_runs() {
    tcp_bus_smoke::run_example().expect("tcp_bus_smoke example should run");
}
