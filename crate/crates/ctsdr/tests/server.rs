use std::time::Duration;

use ctsdr::protocol::{Command, ErrorCode, Inbound, Message, Mode, Outbound};
use ctsdr::server::{serve, ServerOptions};
use ctsdr::session::SessionOptions;
use ctsdr_core::model::default_config;
use ctsdr_core::sim::JointRates;
use futures_util::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message as Ws;

type Socket = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<TcpStream>>;

async fn start() -> std::net::SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let opts = ServerOptions {
        config: default_config(),
        session: SessionOptions {
            voxel_size: 1.0,
            ..SessionOptions::default()
        },
    };
    tokio::spawn(serve(listener, opts));
    addr
}

async fn get(addr: std::net::SocketAddr, path: &str) -> serde_json::Value {
    let mut s = TcpStream::connect(addr).await.unwrap();
    s.write_all(format!("GET {path} HTTP/1.1\r\nHost: test\r\nConnection: close\r\n\r\n").as_bytes())
        .await
        .unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    assert!(buf.starts_with("HTTP/1.1 200"), "{buf}");
    let body = buf.split("\r\n\r\n").nth(1).unwrap();
    serde_json::from_str(body).unwrap()
}

async fn next(ws: &mut Socket) -> Message {
    loop {
        let frame = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("message within 10 s")
            .expect("open stream")
            .unwrap();
        if let Ws::Text(t) = frame {
            return Message::from_line(t.as_str()).unwrap();
        }
    }
}

async fn send(ws: &mut Socket, cmd: Command) {
    ws.send(Ws::Text(Inbound::new(cmd).to_line().into())).await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn rest_endpoints() {
    let addr = start().await;
    let health = get(addr, "/health").await;
    assert_eq!(health["status"], "ok");
    assert_eq!(health["protocol"], 1);
    let list = get(addr, "/scenarios").await;
    let names: Vec<_> = list
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["name"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(names, ["S1", "S2", "OOP90"]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn writer_jogs_and_observer_watches() {
    let addr = start().await;
    let url = format!("ws://{addr}/session/bench");
    let (mut writer, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    match next(&mut writer).await.body {
        Outbound::Hello { writer, protocol, .. } => {
            assert!(writer);
            assert_eq!(protocol, 1);
        }
        other => panic!("expected hello, got {other:?}"),
    }

    let (mut observer, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    match next(&mut observer).await.body {
        Outbound::Hello { writer, .. } => assert!(!writer),
        other => panic!("expected hello, got {other:?}"),
    }

    send(&mut writer, Command::SetSpindle { rpm: 1000.0 }).await;
    send(
        &mut writer,
        Command::Jog {
            rates: JointRates {
                inner_translation: 1.0,
                ..Default::default()
            },
        },
    )
    .await;

    // the observer sees the jog through the broadcast stream
    let mut last_seq = None;
    let mut advanced = false;
    for _ in 0..2000 {
        let m = next(&mut observer).await;
        if let Some(seq) = m.seq {
            if let Some(prev) = last_seq {
                assert_eq!(seq, prev + 1);
            }
            last_seq = Some(seq);
        }
        if let Outbound::State { mode, joints, .. } = &m.body {
            if *mode == Mode::Jogging && joints.inner_translation > 0.1 {
                advanced = true;
                break;
            }
        }
    }
    assert!(advanced);

    send(&mut observer, Command::Stop).await;
    loop {
        let m = next(&mut observer).await;
        if let Outbound::Error { code, .. } = m.body {
            assert_eq!(code, ErrorCode::ReadOnly);
            assert!(m.seq.is_none());
            break;
        }
    }

    send(&mut writer, Command::Stop).await;
    loop {
        if let Outbound::State { mode: Mode::Idle, .. } = next(&mut writer).await.body {
            break;
        }
    }

    writer
        .send(Ws::Text("{\"v\":1,\"kind\":\"warp\"}".into()))
        .await
        .unwrap();
    loop {
        if let Outbound::Error { code, .. } = next(&mut writer).await.body {
            assert_eq!(code, ErrorCode::Malformed);
            break;
        }
    }
}
