//! Blocking HTTP front end for [`ctxmine::api::Api`].

use std::io::ErrorKind;
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use anyhow::{anyhow, Context as _, Result};
use ctxmine::api::Api;
use ctxmine::pipeline::{PipelineConfig, Workspace};
use tiny_http::{Header, Method, Request, Response, Server};
use tracing::{info, warn};

use crate::ServeArgs;

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("static header is valid")
}

fn handle(api: &Api, mut req: Request) {
    let method = req.method().clone();
    let url = req.url().to_string();
    let response = if method == Method::Options {
        Response::from_string("")
            .with_status_code(204)
            .with_header(header("Access-Control-Allow-Methods", "GET, POST, OPTIONS"))
            .with_header(header("Access-Control-Allow-Headers", "Content-Type"))
    } else {
        let mut body = String::new();
        let r = match req.as_reader().read_to_string(&mut body) {
            Ok(_) => api.handle(method.as_str(), &url, &body),
            Err(e) => ctxmine::api::ApiResponse {
                status: 400,
                content_type: ctxmine::api::JSON,
                body: serde_json::json!({ "error": format!("unreadable body: {e}") }).to_string(),
            },
        };
        info!(%method, %url, status = r.status, "request");
        Response::from_string(r.body)
            .with_status_code(r.status)
            .with_header(header("Content-Type", r.content_type))
    };
    let response = response.with_header(header("Access-Control-Allow-Origin", "*"));
    if let Err(e) = req.respond(response) {
        warn!(%url, "failed to send response: {e}");
    }
}

pub fn serve(workspace: Workspace, config: PipelineConfig, args: &ServeArgs) -> Result<()> {
    let addr = format!("{}:{}", args.host, args.port);
    let listener = TcpListener::bind(&addr).map_err(|e| match e.kind() {
        ErrorKind::AddrInUse => anyhow!("port {} is already in use on {}", args.port, args.host),
        _ => anyhow!("cannot bind {addr}: {e}"),
    })?;
    let local = listener.local_addr()?;
    let api = Arc::new(Api::open(workspace, config).context("opening the workspace")?);
    let server = Arc::new(
        Server::from_listener(listener, None).map_err(|e| anyhow!("cannot start server: {e}"))?,
    );
    println!("listening on http://{local}");
    let workers: Vec<_> = (0..args.threads.max(1))
        .map(|_| {
            let server = server.clone();
            let api = api.clone();
            thread::spawn(move || {
                for req in server.incoming_requests() {
                    handle(&api, req);
                }
            })
        })
        .collect();
    for w in workers {
        w.join().map_err(|_| anyhow!("server worker panicked"))?;
    }
    Ok(())
}
