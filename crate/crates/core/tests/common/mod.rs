#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;

use vafl::data::{DataBundle, DataSource};
use vafl::fl::{Algorithm, HyperParams};
use vafl::nn::ModelSpec;
use vafl::sim::{DataMode, ExperimentConfig, LatencyModel};
use vafl::wire::MODEL_UPLOAD;

pub fn synthetic_bundle(train_rows: usize, test_rows: usize, seed: u64) -> DataBundle {
    DataSource::Synthetic {
        train_rows,
        test_rows,
        seed,
    }
    .load()
    .unwrap()
}

/// A small IID run that trains in milliseconds.
pub fn small_config(n_clients: usize, algorithm: Algorithm, rounds: u32) -> ExperimentConfig {
    ExperimentConfig {
        name: "small".into(),
        n_clients,
        data: DataMode::Iid { per_client_count: 96 },
        algorithm,
        hp: HyperParams {
            local_rounds: 1,
            total_rounds: rounds,
            ..HyperParams::default()
        },
        latency: LatencyModel::zero(),
        seed: 7,
        target_acc: 0.9,
        stop_at_target: false,
        model: ModelSpec::new(vec![784, 12, 10]).unwrap(),
        eval_fraction: 0.25,
        parallel: false,
    }
}

/// Forwards one accepted connection per client to `upstream`, counting
/// MODEL_UPLOAD frames on the client-to-server direction.
pub fn counting_proxy(upstream: String, connections: usize, uploads: Arc<AtomicU64>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        for _ in 0..connections {
            let (down, _) = listener.accept().unwrap();
            let up = TcpStream::connect(&upstream).unwrap();
            let (mut d_read, mut u_write) = (down.try_clone().unwrap(), up.try_clone().unwrap());
            let uploads = Arc::clone(&uploads);
            thread::spawn(move || {
                // client -> server: frame by frame so types can be counted
                loop {
                    let mut len = [0u8; 4];
                    if d_read.read_exact(&mut len).is_err() {
                        break;
                    }
                    let mut body = vec![0u8; u32::from_be_bytes(len) as usize];
                    if d_read.read_exact(&mut body).is_err() {
                        break;
                    }
                    if body[0] == MODEL_UPLOAD {
                        uploads.fetch_add(1, Ordering::SeqCst);
                    }
                    if u_write.write_all(&len).and_then(|_| u_write.write_all(&body)).is_err() {
                        break;
                    }
                }
                let _ = u_write.shutdown(Shutdown::Write);
            });
            let (mut u_read, mut d_write) = (up, down);
            thread::spawn(move || {
                let _ = std::io::copy(&mut u_read, &mut d_write);
                let _ = d_write.shutdown(Shutdown::Write);
            });
        }
    });
    addr
}
