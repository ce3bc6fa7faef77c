use clap::Parser;

fn main() {
    let cli = qcnet_cli::Cli::parse();
    if let Err(e) = qcnet_cli::run(cli) {
        eprintln!("{}", e.to_json_line());
        std::process::exit(1);
    }
}
