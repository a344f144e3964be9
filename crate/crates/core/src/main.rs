fn main() {
    std::process::exit(cpf::cli::run(std::env::args_os()));
}
