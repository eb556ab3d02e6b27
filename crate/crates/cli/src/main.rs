use clap::Parser;

fn main() {
    let cli = spinlab_cli::cli::Cli::parse();
    std::process::exit(spinlab_cli::run(cli));
}
