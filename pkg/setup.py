from setuptools import setup

setup(
    name="slln-lab",
    version="1.0.0",
    description="Simulation laboratory for strong laws of large numbers under dependence",
    packages=["app", "models", "services", "scripts"],
    package_data={"app": ["templates/*.txt"]},
    python_requires=">=3.9",
    install_requires=[
        "numpy",
        "scipy",
        "pydantic>=2",
        "pydantic-settings",
        "python-dotenv",
        "jinja2",
        "tenacity",
        'tomli; python_version < "3.11"',
    ],
    extras_require={"test": ["pytest", "hypothesis", "mpmath"]},
    entry_points={"console_scripts": ["slln-lab=app.main:main"]},
)
