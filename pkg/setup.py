#!/usr/bin/env python3
"""
SOAP Security Toolkit
Setup Script

This script sets up a local environment for the toolkit:
1. Creates necessary directories
2. Installs required dependencies into a virtual environment
3. Sets up environment variables
4. Generates demo keys, trust stores, a user store and one
   configuration file per security scenario
"""

import os
import shutil
import subprocess
import sys

SCENARIOS = ["NoSecurity", "UsernamePassword", "HttpiSign", "SignEncrypt"]
DEMO_USER = ("alice", "wonderland")


def print_header():
    """Print the setup header."""
    print("\n" + "="*80)
    print(" "*28 + "SOAP Security Toolkit" + " "*28)
    print(" "*33 + "Setup Script" + " "*33)
    print("="*80 + "\n")


def venv_command(name):
    return os.path.join("venv", "bin", name) if os.name != "nt" else os.path.join("venv", "Scripts", name)


def create_directories():
    """Create necessary directories for the project."""
    print("Creating directories...")

    directories = [
        "config",
        "keys",
        os.path.join("truststore", "server"),
        os.path.join("truststore", "client"),
        "logs",
        "bench",
    ]

    for directory in directories:
        os.makedirs(directory, exist_ok=True)
        print(f"  - Created '{directory}' directory")

    print("Directory setup complete.\n")


def install_dependencies():
    """Install Python dependencies from requirements.txt."""
    print("Installing dependencies...")

    if not os.path.exists("requirements.txt"):
        print("  ERROR: requirements.txt not found!")
        return False

    if not os.path.exists("venv"):
        print("  Creating virtual environment...")
        try:
            subprocess.run([sys.executable, "-m", "venv", "venv"], check=True)
            print("  - Virtual environment created successfully")
        except subprocess.CalledProcessError:
            print("  ERROR: Failed to create virtual environment!")
            return False

    print("  Installing required packages...")
    pip_cmd = venv_command("pip")
    try:
        subprocess.run([pip_cmd, "install", "-U", "pip"], check=True)
        subprocess.run([pip_cmd, "install", "-r", "requirements.txt"], check=True)
        print("  - Packages installed successfully")
    except subprocess.CalledProcessError:
        print("  ERROR: Failed to install dependencies!")
        return False

    print("Dependency installation complete.\n")
    return True


def setup_env_file():
    """Set up the .env file."""
    print("Setting up environment variables...")

    env_file = ".env"
    if os.path.exists(env_file):
        overwrite = input("  .env file already exists. Overwrite? (y/n): ").lower()
        if overwrite != "y":
            print("  - Skipping environment setup")
            return

    env_content = f"""# SOAP Security Toolkit
# Environment Variables

# Configuration read by run_api_server.py
SOAPSEC_CONFIG=config/HttpiSign.conf

# Optional shared nonce cache; without it nonces stay in process memory
# SOAPSEC_REDIS_URL=redis://localhost:6379/0

# Credentials used by `invoke` and `bench` for the UsernamePassword scenario
SOAPSEC_USERNAME={DEMO_USER[0]}
SOAPSEC_PASSWORD={DEMO_USER[1]}

LOG_LEVEL=INFO
"""
    with open(env_file, "w") as f:
        f.write(env_content)

    print("  - Created .env file")
    print("Environment setup complete.\n")


def provision_keys():
    """Generate server and client key pairs and cross-trust them."""
    print("Generating demo keys...")
    try:
        subprocess.run([venv_command("python"), "-m", "src.main", "keygen",
                        "--out", "keys", "--subjects", "server,client"], check=True)
    except (subprocess.CalledProcessError, OSError):
        print("  ERROR: Key generation failed!")
        return False

    shutil.copy(os.path.join("keys", "client.cert.pem"), os.path.join("truststore", "server"))
    shutil.copy(os.path.join("keys", "server.cert.pem"), os.path.join("truststore", "client"))
    print("  - keys/server.* and keys/client.* generated")
    print("  - truststore/server trusts the client, truststore/client trusts the server")
    print("Key generation complete.\n")
    return True


def setup_config_files():
    """Write the user store and one service configuration per scenario."""
    print("Setting up configuration files...")

    users_file = os.path.join("config", "users.txt")
    with open(users_file, "w") as f:
        f.write("# username:password\n")
        f.write(f"{DEMO_USER[0]}:{DEMO_USER[1]}\n")
    os.chmod(users_file, 0o600)
    print(f"  - Created {users_file}")

    for scenario in SCENARIOS:
        conf_file = os.path.join("config", f"{scenario}.conf")
        with open(conf_file, "w") as f:
            f.write(f"scenario={scenario}\n")
            f.write("listen_address=127.0.0.1:8080\n")
            f.write("private_key_path=../keys/server.key.pem\n")
            f.write("certificate_path=../keys/server.cert.pem\n")
            f.write("truststore_path=../truststore/server\n")
            f.write("userstore_path=users.txt\n")
        print(f"  - Created {conf_file}")

    print("Configuration setup complete.\n")


def verify_installation():
    """Verify that the installation is working."""
    print("Verifying installation...")

    if not os.path.exists("venv"):
        print("  ERROR: Virtual environment not found!")
        return False

    result = subprocess.run([venv_command("python"), "-c",
                             "import lxml, cryptography, flask, pandas, matplotlib, requests, dotenv"],
                            stderr=subprocess.PIPE, stdout=subprocess.PIPE)
    if result.returncode != 0:
        print("  ERROR: Package verification failed!")
        return False
    print("  - Package verification successful")

    missing_files = [f for f in ["keys/server.key.pem", "keys/client.key.pem", "config/users.txt"]
                     if not os.path.exists(f)]
    if missing_files:
        print("  WARNING: The following files are missing:")
        for f in missing_files:
            print(f"    - {f}")
        return False

    print("  - All required files are present")
    print("Installation verification complete.\n")
    return True


def display_next_steps():
    """Display next steps for the user."""
    print("\n" + "="*80)
    print(" "*35 + "NEXT STEPS" + " "*35)
    print("="*80)

    print("""
1. Activate the virtual environment:

   source venv/bin/activate  # On Windows: venv\\Scripts\\activate

2. Start the service under one scenario:

   python -m src.main serve --config config/HttpiSign.conf

3. Benchmark it from another terminal:

   python -m src.main bench --url http://127.0.0.1:8080/service --scenario HttpiSign \\
       --key keys/client.key.pem --cert keys/client.cert.pem \\
       --truststore truststore/client --peer-cert keys/server.cert.pem --out bench

4. Repeat 2 and 3 for the other scenarios; bench/bench.csv collects them all.
""")


def main():
    """Main setup function."""
    print_header()

    create_directories()

    if not install_dependencies():
        print("\nERROR: Setup failed during dependency installation.")
        sys.exit(1)

    setup_env_file()

    if not provision_keys():
        print("\nERROR: Setup failed during key generation.")
        sys.exit(1)

    setup_config_files()

    if verify_installation():
        print("\nSetup completed successfully!")
    else:
        print("\nWARNING: Setup completed with some issues.")

    display_next_steps()


if __name__ == "__main__":
    if len(sys.argv) > 1:
        # Invoked by a build frontend (pip/setuptools): package metadata lives in pyproject.toml
        from setuptools import setup
        setup()
    else:
        main()
