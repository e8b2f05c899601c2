import django.db.models.deletion
import uuid
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
                ('subcommand', models.CharField(max_length=40)),
                ('status', models.CharField(choices=[('PENDING', 'Pending'), ('RUNNING', 'Running'), ('PASSED', 'Passed'), ('FAILED', 'Failed'), ('ERROR', 'Error')], default='PENDING', max_length=20)),
                ('seed', models.BigIntegerField(default=0)),
                ('threads', models.IntegerField(default=1)),
                ('config_text', models.TextField(blank=True)),
                ('output_dir', models.CharField(blank=True, max_length=500)),
                ('exit_code', models.IntegerField(blank=True, null=True)),
                ('error_message', models.TextField(blank=True)),
            ],
            options={
                'ordering': ['-created_at'],
                'indexes': [models.Index(fields=['status'], name='dirac_dn_ex_status_572db8_idx'), models.Index(fields=['subcommand'], name='dirac_dn_ex_subcomm_ffcf59_idx')],
            },
        ),
        migrations.CreateModel(
            name='ResidualRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=120)),
                ('value', models.FloatField()),
                ('tolerance', models.FloatField(blank=True, null=True)),
                ('passed', models.BooleanField(default=True)),
                ('grid', models.CharField(blank=True, max_length=80)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='residuals', to='dirac_dn.experimentrun')),
            ],
            options={
                'ordering': ['run', 'id'],
            },
        ),
    ]
